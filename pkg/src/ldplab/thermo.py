"""Horseshoes, cylinders, periodic-orbit measures and pressure.

A horseshoe is a finite family of disjoint intervals ``L_i`` that the map
``g`` (either ``f^m`` or a piecewise linear toy) sends diffeomorphically
onto one interval ``J``.  Cylinders are built backwards with the inverse
branches, which contract, and their normalized lengths give the weights
of the approximate equilibrium states for ``-log|Dg|``.

Length sums are normalized by ``|J|`` and by the word length ``k + 1``, so
the proxy ``(1/(k+1)) log sum_w |L_w| / |J|`` is exact for linear branches
and never positive (cylinders of one level are disjoint subsets of ``J``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExceededError, NotFoundError, ValidationError

WORD_BUDGET = 10 ** 6


class Horseshoe:
    """Full branches of ``g`` over a common image ``J``.

    Subclasses provide ``inverse``, ``forward`` and ``birkhoff``.
    """

    m = 1
    intervals = None
    J = None

    @property
    def q(self):
        return len(self.intervals)

    def inverse(self, i, y):
        raise NotImplementedError

    def forward(self, x):
        """``(g(x), log|Dg(x)|)`` for points of the horseshoe."""
        raise NotImplementedError

    def birkhoff(self, phi, x):
        """``S_m phi(x) = sum_{i<m} phi(f^i x)``."""
        raise NotImplementedError

    @property
    def interior(self):
        """Whether every ``L_i`` lies in the interior of ``J``."""
        lo, hi = self.J
        return bool(np.all(self.intervals[:, 0] > lo) and np.all(self.intervals[:, 1] < hi))

    def expansion(self, samples=2001):
        """``(c, kappa)`` with ``|Dg^n| >= c kappa^n`` from sampled derivatives.

        Only one-step derivatives are sampled, so ``c = 1`` and ``kappa`` is
        the smallest sampled ``|Dg|``.
        """
        u = np.linspace(0.0, 1.0, samples)
        worst = np.inf
        for lo, hi in self.intervals:
            _, ld = self.forward(lo + u * (hi - lo))
            worst = min(worst, float(ld.min()))
        return 1.0, math.exp(worst)

    def as_dict(self):
        c, kappa = self.expansion()
        return {"m": self.m, "q": self.q, "J": list(map(float, self.J)),
                "intervals": self.intervals.tolist(), "expansion": [c, kappa],
                "interior": self.interior}


class LinearHorseshoe(Horseshoe):
    """Increasing linear branches with the given slopes, packed left to
    right inside ``J``."""

    def __init__(self, slopes, J=(0.0, 1.0)):
        slopes = np.asarray(slopes, dtype=float)
        lo, hi = map(float, J)
        width = hi - lo
        if np.any(slopes <= 1.0):
            raise ValidationError("slopes must exceed 1")
        lens = width / slopes
        if lens.sum() > width * (1 + 1e-12):
            raise ValidationError("branches do not fit inside J")
        left = lo + np.concatenate(([0.0], np.cumsum(lens)[:-1]))
        self.slopes = slopes
        self.J = (lo, hi)
        self.intervals = np.stack([left, left + lens], axis=1)

    def inverse(self, i, y):
        return self.intervals[i, 0] + (np.asarray(y) - self.J[0]) / self.slopes[i]

    def branch_of(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.intervals[:, 0], x, side="right") - 1
        return np.clip(i, 0, self.q - 1)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        i = self.branch_of(x)
        s = self.slopes[i]
        return self.J[0] + (x - self.intervals[i, 0]) * s, np.log(s)

    def birkhoff(self, phi, x):
        return phi(np.asarray(x, dtype=float))


class QuadraticHorseshoe(Horseshoe):
    """Branches of ``f^m`` labelled by the sign words of their laps."""

    def __init__(self, a, m, J, words, intervals):
        self.a = float(a)
        self.m = int(m)
        self.J = tuple(map(float, J))
        self.words = np.asarray(words, dtype=np.int8).reshape(-1, m)
        self.intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)

    def inverse(self, i, y):
        x = np.asarray(y, dtype=float)
        for s in self.words[i][::-1]:
            x = s * np.sqrt(np.clip((1.0 - x) / self.a, 0.0, None))
        return x

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        ld = np.zeros_like(x)
        with np.errstate(divide="ignore"):
            for _ in range(self.m):
                ld = ld + np.log(2.0 * self.a * np.abs(x))
                x = 1.0 - self.a * x * x
        return x, ld

    def birkhoff(self, phi, x):
        x = np.asarray(x, dtype=float)
        s = np.zeros_like(x)
        for _ in range(self.m):
            s = s + phi(x)
            x = 1.0 - self.a * x * x
        return s


def find_horseshoe(params, m, window=None, q_min=2):
    """Full branches of ``f^m`` over ``window`` that lie inside it.

    Every sign word of length ``m`` is tried: ``window`` is pulled back
    along the word, which succeeds exactly when ``f^m`` has a lap mapping
    a subinterval onto the window with those signs.
    """
    a = params.a
    if m < 1:
        raise ValidationError("m must be at least 1")
    core = (1.0 - a, 1.0)
    lo, hi = core if window is None else map(float, window)
    tol = 1e-12
    if lo >= hi or lo < core[0] - tol or hi > core[1] + tol:
        raise ValidationError(f"window must be a subinterval of the core {core}")
    if q_min > 2 ** m:
        raise NotFoundError(f"at most {2 ** m} branches exist for m={m}")
    if 2 ** m > WORD_BUDGET:
        raise BudgetExceededError("too many sign words")
    words, ints = [], []
    for word in itertools.product((-1, 1), repeat=m):
        y = np.array([lo, hi])
        ok = True
        for s in word[::-1]:
            if np.any(y < core[0] - tol):
                ok = False
                break
            y = s * np.sqrt(np.clip((1.0 - y) / a, 0.0, None))
        if not ok:
            continue
        L = (float(y.min()), float(y.max()))
        if L[0] >= lo - tol and L[1] <= hi + tol and L[1] > L[0]:
            words.append(word)
            ints.append(L)
    if len(words) < q_min:
        raise NotFoundError(
            f"only {len(words)} full branches over the window at m={m}; need {q_min}")
    order = np.argsort([L[0] for L in ints])
    return QuadraticHorseshoe(a, m, (lo, hi), np.array(words)[order],
                              np.array(ints)[order])


@dataclass
class CylinderTree:
    """Cylinders of every level up to ``k``.

    Words are indexed in base ``q`` with the first symbol most significant.
    ``levels[j]`` holds the ``(q**(j+1), 2)`` endpoint array of level ``j``.
    """

    horseshoe: Horseshoe
    k: int
    levels: list
    periodic: np.ndarray
    shift: np.ndarray

    @property
    def q(self):
        return self.horseshoe.q

    @property
    def lengths(self):
        L = self.levels[-1]
        return L[:, 1] - L[:, 0]

    def words(self):
        q, n = self.q, self.k + 1
        idx = np.arange(q ** n)
        return np.stack([(idx // q ** (n - 1 - j)) % q for j in range(n)], axis=1)

    def orbit_points(self):
        """``(q**(k+1), k+1)`` array: row ``w`` is the periodic orbit of ``w``."""
        n = self.k + 1
        out = np.empty((self.periodic.size, n))
        idx = np.arange(self.periodic.size)
        for i in range(n):
            out[:, i] = self.periodic[idx]
            idx = self.shift[idx]
        return out

    def child_sum_error(self):
        """Largest relative gap between a parent and the sum of its children."""
        worst = 0.0
        for j in range(1, len(self.levels)):
            par = self.levels[j - 1]
            ch = self.levels[j]
            clen = (ch[:, 1] - ch[:, 0]).reshape(-1, self.q).sum(axis=1)
            # parent of word a_0..a_j is a_0..a_{j-1}: drop the last symbol
            plen = par[:, 1] - par[:, 0]
            worst = max(worst, float(np.max(np.abs(clen - plen) / plen)))
        return worst

    def ratio_bound(self):
        """``min |L_{wa}| |J| / (|L_w| |L_a|)`` over the deepest two levels."""
        if len(self.levels) < 2:
            return float("nan")
        J = self.horseshoe.J[1] - self.horseshoe.J[0]
        par = self.levels[-2]
        ch = self.levels[-1]
        one = self.levels[0]
        plen = np.repeat(par[:, 1] - par[:, 0], self.q)
        alen = np.tile(one[:, 1] - one[:, 0], par.shape[0])
        clen = ch[:, 1] - ch[:, 0]
        return float(np.min(clen * J / (plen * alen)))


def cylinders(h, k, budget=WORD_BUDGET, tol=1e-12, max_iter=200):
    """Cylinders ``L_{a_0...a_k}`` and their periodic points.

    ``L_{a_0 u} = g_{a_0}^{-1} L_u``, so each level is obtained from the
    previous by prepending a symbol.  The periodic point of a word is the
    fixed point of its inverse composition, found by iteration.
    """
    q = h.q
    if k < 0:
        raise ValidationError("k must be nonnegative")
    if q ** (k + 1) > budget:
        raise BudgetExceededError(f"{q}**{k + 1} words exceed the budget {budget}")
    levels = [np.array(h.intervals, dtype=float)]
    for j in range(1, k + 1):
        prev = levels[-1]
        parts = []
        for a in range(q):
            e = h.inverse(a, prev)
            parts.append(np.sort(e, axis=1))
        levels.append(np.concatenate(parts, axis=0))
    words = None
    n = k + 1
    idx = np.arange(q ** n)
    words = np.stack([(idx // q ** (n - 1 - j)) % q for j in range(n)], axis=1)
    L = levels[-1]
    x = 0.5 * (L[:, 0] + L[:, 1])
    for _ in range(max_iter):
        y = x.copy()
        for j in range(n - 1, -1, -1):
            for a in range(q):
                sel = words[:, j] == a
                y[sel] = h.inverse(a, y[sel])
        done = np.max(np.abs(y - x)) <= tol
        x = y
        if done:
            break
    shift = (idx % q ** (n - 1)) * q + words[:, 0]
    return CylinderTree(horseshoe=h, k=k, levels=levels, periodic=x, shift=shift)


@dataclass
class MeasureApprox:
    """A finitely supported approximation to an invariant measure.

    For ``nu_k`` and spreads, ``entropy_lb`` is the entropy implied by the
    free-energy proxy, ``proxy + lyapunov``, capped at ``log q``; it is
    not a Shannon sum.
    """

    kind: str
    support: np.ndarray
    weights: np.ndarray
    entropy_lb: float
    lyapunov: float
    free_energy: float
    observable_means: dict = field(default_factory=dict)
    period: int = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"kind": self.kind, "entropy_lb": self.entropy_lb,
                "lyapunov": self.lyapunov, "free_energy": self.free_energy,
                "observable_means": dict(self.observable_means),
                "period": self.period, "support_size": int(np.size(self.support)),
                **self.extra}


def _orbit_average(tree, values):
    """Average of per-point ``values`` (indexed by word) over each orbit."""
    idx = np.arange(values.size)
    acc = np.zeros_like(values, dtype=float)
    for _ in range(tree.k + 1):
        acc += values[idx]
        idx = tree.shift[idx]
    return acc / (tree.k + 1)


def equilibrium_nu_k(tree, observables=None):
    """Cylinder-weighted periodic measure and the free-energy proxy.

    Returns ``(measure, proxy)`` where ``proxy = (1/(k+1)) log sum_w |L_w|/|J|``.
    """
    h = tree.horseshoe
    Jlen = h.J[1] - h.J[0]
    lens = tree.lengths / Jlen
    total = lens.sum()
    weights = lens / total
    proxy = math.log(total) / (tree.k + 1)
    _, ld = h.forward(tree.periodic)
    phi_bar = _orbit_average(tree, ld)
    lyap = float(weights @ phi_bar)
    means = {}
    for name, fn in (observables or {}).items():
        means[name] = float(weights @ _orbit_average(tree, h.birkhoff(fn, tree.periodic)))
    # finite-k distortion can push proxy + lyap past the topological
    # entropy log q of the horseshoe; no invariant measure exceeds that
    h_lb = proxy + lyap
    clipped = h_lb > math.log(h.q)
    if clipped:
        h_lb = math.log(h.q)
    nu = MeasureApprox(kind="nu_k", support=tree.orbit_points(), weights=weights,
                       entropy_lb=h_lb, lyapunov=lyap, free_energy=h_lb - lyap,
                       observable_means=means, period=tree.k + 1,
                       extra={"m": h.m, "k": tree.k, "proxy": proxy,
                              "entropy_clipped": bool(clipped)})
    return nu, proxy


def pressure_curve(tree, phi, s_grid):
    """Tilted pressure ``p_k(s)`` and its slope ``t(s)``.

    ``p_k(s) = (1/(k+1)) log sum_w (|L_w|/|J|) exp(s S_w)`` where ``S_w`` is
    the sum of ``S_m phi`` over the periodic orbit of ``w``; ``t(s)`` is the
    tilted mean of ``S_w / (k+1)``.  Returns an ``(len(s_grid), 3)`` array of
    ``(s, p, t)`` sorted by ``s``.
    """
    h = tree.horseshoe
    n = tree.k + 1
    loglen = np.log(tree.lengths / (h.J[1] - h.J[0]))
    S = n * _orbit_average(tree, h.birkhoff(phi, tree.periodic))
    s_grid = np.sort(np.asarray(s_grid, dtype=float))
    out = np.empty((s_grid.size, 3))
    for i, s in enumerate(s_grid):
        z = loglen + s * S
        lse = logsumexp(z)
        w = np.exp(z - lse)
        out[i] = (s, lse / n, float(w @ S) / n)
    return out


def spread_measure(h, nu, observables=None):
    """Average of the ``m`` push-forwards of a ``g``-invariant measure.

    ``nu.observable_means`` must hold means of ``S_m phi``; they are divided
    by ``m``.
    """
    m = h.m
    means = {k: v / m for k, v in nu.observable_means.items()}
    return MeasureApprox(kind="spread", support=nu.support, weights=nu.weights,
                         entropy_lb=nu.entropy_lb / m, lyapunov=nu.lyapunov / m,
                         free_energy=(nu.entropy_lb - nu.lyapunov) / m,
                         observable_means=means, period=nu.period,
                         extra={**nu.extra, "m": m})


# ---------------------------------------------------------------------------
# periodic orbits of f

def turning_points(a, p):
    """Sorted points of ``[-1, 1]`` with ``f^j x = 0`` for some ``j < p``."""
    level = np.array([0.0])
    pts = [level]
    for _ in range(p - 1):
        y = level[level >= 1.0 - a]
        r = np.sqrt((1.0 - y) / a)
        level = np.concatenate((-r, r))
        pts.append(level)
    return np.unique(np.concatenate(pts))


def fixed_points_fp(a, p, iters=64):
    """Fixed points of ``f^p`` by bisection on each monotone lap."""
    t = turning_points(a, p)
    edges = np.concatenate(([-1.0], t[(t > -1.0) & (t < 1.0)], [1.0]))
    lo, hi = edges[:-1].copy(), edges[1:].copy()

    def g(x):
        y = x.copy()
        for _ in range(p):
            y = 1.0 - a * y * y
        return y - x

    glo, ghi = g(lo), g(hi)
    last = np.zeros(lo.size, dtype=bool)
    last[-1] = True
    # half-open laps [lo, hi): a root at hi belongs to the next lap
    has = ((glo == 0.0) | (glo * ghi < 0.0)) | (last & (ghi == 0.0))
    lo, hi, glo = lo[has], hi[has], glo[has]
    exact_lo = glo == 0.0
    exact_hi = ~exact_lo & (g(hi) == 0.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    x = 0.5 * (lo + hi)
    x[exact_lo] = edges[:-1][has][exact_lo]
    x[exact_hi] = edges[1:][has][exact_hi]
    return np.sort(x)


def periodic_orbit_survey(params, period_max, observables=None, tol=1e-9):
    """Periodic-orbit measures of ``f`` for all minimal periods up to ``period_max``."""
    if not 1 <= period_max <= 24:
        raise ValidationError("period_max must lie in [1, 24]")
    a = params.a
    out = []
    for p in range(1, period_max + 1):
        P = fixed_points_fp(a, p)
        minimal = np.ones(P.size, dtype=bool)
        for d in range(1, p):
            if p % d == 0:
                y = P.copy()
                for _ in range(d):
                    y = 1.0 - a * y * y
                minimal &= np.abs(y - P) > tol
        P = P[minimal]
        if P.size == 0:
            continue
        fP = 1.0 - a * P * P
        j = np.clip(np.searchsorted(P, fP), 1, P.size - 1)
        succ = np.where(np.abs(P[j - 1] - fP) <= np.abs(P[j] - fP), j - 1, j)
        if P.size == 1:
            succ = np.zeros(1, dtype=int)
        rep = np.arange(P.size)
        cur = rep.copy()
        for _ in range(p):
            cur = succ[cur]
            rep = np.minimum(rep, cur)
        for r in np.unique(rep):
            orbit = [r]
            c = succ[r]
            while c != r and len(orbit) < p:
                orbit.append(c)
                c = succ[c]
            pts = P[np.array(orbit)]
            with np.errstate(divide="ignore"):
                lyap = float(np.mean(np.log(2.0 * a * np.abs(pts))))
            means = {name: float(np.mean(fn(pts))) for name, fn in (observables or {}).items()}
            out.append(MeasureApprox(kind="periodic", support=pts,
                                     weights=np.full(pts.size, 1.0 / pts.size),
                                     entropy_lb=0.0, lyapunov=lyap, free_energy=-lyap,
                                     observable_means=means, period=p))
    return out
