"""Quadratic map, critical-orbit schedule, binding radii and bound periods.

The family is ``f(x) = 1 - a x**2`` on ``[-1, 1]``.  All derivative products
are accumulated as sums of logarithms so that nothing overflows at depth.
Orbits that shadow the critical orbit are advanced in deviation
coordinates (``z_k = c_k + w_k``) which keeps full relative precision for
points within ``1e-8`` of the critical point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateOrbitError,
    DomainEscapeError,
    OutOfScheduleError,
    ValidationError,
)

LN2 = math.log(2.0)
DEFAULT_LAMBDA = 0.9 * LN2
DEFAULT_ALPHA = 0.01
DEFAULT_EPSILON = 0.01
MIN_CAPN = 11
CAPN_TARGET = 1e-3


@dataclass(frozen=True)
class MapParams:
    """Parameters of the map and of the binding construction.

    Parameters
    ----------
    a : float
        Map parameter in ``(0, 2]``.
    lam : float
        Expansion rate along the critical orbit.
    alpha : float
        Recurrence exponent.
    epsilon : float
        Binding slack; must satisfy ``8 * epsilon < lam / 3``.
    capN : int, optional
        Grid start index ``N`` (``> 10``).  When omitted, the smallest ``N``
        with ``delta_N <= 1e-3`` is used, floored at 11.
    depth : int
        Length of all tables.
    """

    a: float = 2.0
    lam: float = DEFAULT_LAMBDA
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    capN: int | None = None
    depth: int = 60

    def __post_init__(self):
        if not (0.0 < self.a <= 2.0):
            raise ValidationError(f"a must lie in (0, 2], got {self.a}")
        if not self.epsilon > 0.0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not 8.0 * self.epsilon < self.lam / 3.0:
            raise ValidationError(
                f"epsilon={self.epsilon} violates 8*epsilon < lambda/3 "
                f"(lambda={self.lam})")
        if self.alpha <= 0.0 or self.lam <= 0.0:
            raise ValidationError("lambda and alpha must be positive")
        if self.capN is None:
            object.__setattr__(self, "capN", default_capN(self.a, self.epsilon))
        if int(self.capN) != self.capN or self.capN <= 10:
            raise ValidationError(f"capN must be an integer > 10, got {self.capN}")
        object.__setattr__(self, "capN", int(self.capN))
        if int(self.depth) != self.depth or self.depth < self.capN:
            raise ValidationError(
                f"depth={self.depth} must be an integer >= capN={self.capN}")
        object.__setattr__(self, "depth", int(self.depth))

    @property
    def overridden(self):
        """Names of constants that differ from their defaults."""
        out = []
        if not math.isclose(self.lam, DEFAULT_LAMBDA, rel_tol=0, abs_tol=1e-15):
            out.append("lambda")
        if self.alpha != DEFAULT_ALPHA:
            out.append("alpha")
        return out

    def f(self, x):
        return 1.0 - self.a * x * x

    def as_dict(self):
        return {"a": self.a, "lambda": self.lam, "alpha": self.alpha,
                "epsilon": self.epsilon, "capN": self.capN, "depth": self.depth}


def _log_schedule(a, epsilon, depth):
    """Return ``c``, ``logD``, ``log_d``, ``log_Dn`` and ``log_delta``."""
    c = np.empty(depth + 1)
    x = 1.0
    for n in range(depth + 1):
        c[n] = x
        x = 1.0 - a * x * x
    with np.errstate(divide="ignore"):
        logdf = np.log(2.0 * a * np.abs(c))
    logD = np.concatenate(([0.0], np.cumsum(logdf[:-1])))
    with np.errstate(divide="ignore"):
        log_d = np.log(np.abs(c)) - logD
    log_Dn = np.full(depth + 1, np.nan)
    # D_n = (1/10) / sum_{i<n} exp(-log d_i), summed in log space
    acc = -np.inf
    for n in range(1, depth + 1):
        acc = np.logaddexp(acc, -log_d[n - 1])
        log_Dn[n] = math.log(0.1) - acc
    p = np.arange(depth + 1)
    log_delta = 0.5 * (-epsilon * p + log_Dn)
    return c, logD, log_d, log_Dn, log_delta


def default_capN(a, epsilon, target=CAPN_TARGET, search=400):
    """Smallest ``N`` with ``delta_N <= target``, floored at 11."""
    _, _, log_d, _, log_delta = _log_schedule(a, epsilon, search)
    hit = np.nonzero(log_delta[1:] <= math.log(target))[0]
    n = int(hit[0]) + 1 if hit.size else search
    return max(n, MIN_CAPN)


@dataclass(frozen=True)
class CriticalOrbitTable:
    """Critical-orbit schedule to ``depth``.

    Index ``n`` of every array refers to the same ``n``; ``D[0]`` and
    ``delta[0]`` are undefined and stored as ``nan``.
    """

    params: MapParams
    c: np.ndarray
    logD: np.ndarray
    log_d: np.ndarray
    log_D: np.ndarray
    log_delta: np.ndarray
    d: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)

    @property
    def depth(self):
        return self.params.depth

    @property
    def deltaHat(self):
        return float(self.delta[10])

    @property
    def deltaN(self):
        return float(self.delta[self.params.capN])

    def c_ext(self):
        """Critical orbit with the critical point prepended (index shift 1)."""
        return np.concatenate(([0.0], self.c))


def critical_table(params):
    """Tabulate the critical orbit, derivative cocycle and binding radii."""
    depth = max(params.depth, 10)
    c, logD, log_d, log_D, log_delta = _log_schedule(params.a, params.epsilon, depth)
    zero = np.nonzero(c == 0.0)[0]
    if zero.size:
        raise DegenerateOrbitError(
            f"critical orbit hits 0 at n={int(zero[0])}; schedule undefined")
    return CriticalOrbitTable(
        params=params, c=c, logD=logD, log_d=log_d, log_D=log_D,
        log_delta=log_delta, d=np.exp(log_d), D=np.exp(log_D),
        delta=np.exp(log_delta))


def iterate(params, x, n):
    """Orbit ``[x, f(x), ..., f^n(x)]``, clamped to ``[-1, 1]`` within 1e-12."""
    x = float(x)
    if abs(x) > 1.0 or n < 0:
        raise ValidationError("need |x| <= 1 and n >= 0")
    out = np.empty(n + 1)
    out[0] = x
    for i in range(n):
        x = 1.0 - params.a * x * x
        if abs(x) > 1.0:
            if abs(x) - 1.0 > 1e-12:
                raise DomainEscapeError(f"iterate {i + 1} left [-1,1]: {x!r}")
            x = math.copysign(1.0, x)
        out[i + 1] = x
    return out


def log_derivative(params, x, n):
    """``log|Df^n(x)|`` as an exactly rounded sum; ``-inf`` if an iterate is 0."""
    orbit = iterate(params, x, n)[:n]
    if np.any(orbit == 0.0):
        return -math.inf
    return math.fsum(np.log(2.0 * params.a * np.abs(orbit)).tolist())


def shadow(table, w0, start, steps):
    """Advance deviations from the critical orbit.

    The point ``z_k = c_{start+k} + w_k`` is iterated for ``steps`` steps, where
    ``c_{-1} = 0`` is the critical point itself, so ``start=-1`` with ``w0 = x``
    follows a point near 0 through its binding period.

    Returns
    -------
    w : ndarray, shape (steps + 1, ...)
        Deviations; row ``k`` belongs to ``c_{start+k}``.
    logdf : ndarray, shape (steps, ...)
        ``log|Df(z_k)|`` for ``k < steps``.
    """
    ce = table.c_ext()
    a = table.params.a
    w0 = np.asarray(w0, dtype=float)
    if start + 1 + steps >= ce.size:
        raise OutOfScheduleError("critical table too shallow for shadowing")
    w = np.empty((steps + 1,) + w0.shape)
    logdf = np.empty((steps,) + w0.shape)
    w[0] = w0
    for k in range(steps):
        ck = ce[start + 1 + k]
        z = ck + w[k]
        with np.errstate(divide="ignore"):
            logdf[k] = np.log(2.0 * a * np.abs(z))
        w[k + 1] = -a * w[k] * (2.0 * ck + w[k])
    return w, logdf


def bound_period(table, x):
    """The ``p`` with ``delta_p <= |x| < delta_{p-1}``."""
    ax = abs(float(x))
    if not 0.0 < ax < table.deltaHat:
        raise ValidationError(f"bound period needs 0 < |x| < delta_hat, got {x}")
    # delta[1:] is strictly decreasing; find the first p with delta_p <= |x|
    desc = table.delta[1:table.depth + 1]
    k = int(np.searchsorted(-desc, -ax, side="left"))
    if k >= desc.size:
        raise OutOfScheduleError(
            f"|x|={ax:.3e} below delta_depth={desc[-1]:.3e}; deepen the table")
    return k + 1


@dataclass
class BoundFreeItinerary:
    entries: list
    horizon: int


def itinerary(params, table, x, n):
    """Free returns ``(n_k, p_k)`` of ``x`` to ``(-delta_hat, delta_hat)``."""
    orbit = iterate(params, x, n)
    if np.any(orbit[:n] == 0.0):
        raise ValidationError("orbit hits 0 exactly")
    entries = []
    k = 0
    dh = table.deltaHat
    while k <= n:
        if abs(orbit[k]) < dh:
            p = bound_period(table, orbit[k])
            entries.append((k, p))
            k += p
        else:
            k += 1
    return BoundFreeItinerary(entries=entries, horizon=n)


def grid_count(epsilon, p):
    return int(math.floor(math.exp(3.0 * epsilon * p)))


@dataclass(frozen=True)
class GridInterval:
    p: int
    j: int
    left: float
    right: float

    @property
    def length(self):
        return self.right - self.left


@dataclass(frozen=True)
class IpjGrid:
    """Equal-length subdivision of the rings ``[delta_p, delta_{p-1})``.

    ``edges`` holds every positive cell edge in increasing order, from
    ``delta_{p_max}`` to ``delta_N``; cell ``k`` is ``[edges[k], edges[k+1])``
    with labels ``cell_p[k]`` and ``cell_j[k]``.  Negative cells are the
    mirrors ``(-edges[k+1], -edges[k]]``.
    """

    capN: int
    p_max: int
    edges: np.ndarray
    cell_p: np.ndarray
    cell_j: np.ndarray
    lam_plus: tuple
    delta: float

    @property
    def lam_len(self):
        return self.lam_plus[1] - self.lam_plus[0]

    def cells(self, signed=True):
        out = []
        for k in range(self.cell_p.size):
            l, r = float(self.edges[k]), float(self.edges[k + 1])
            out.append(GridInterval(int(self.cell_p[k]), int(self.cell_j[k]), l, r))
            if signed:
                out.append(GridInterval(int(self.cell_p[k]), -int(self.cell_j[k]), -r, -l))
        return out

    def locate(self, y):
        """Cell index of ``|y|`` or -1 when below ``delta_{p_max}``."""
        ay = abs(y)
        if ay < self.edges[0] or ay >= self.edges[-1]:
            return -1
        return int(np.searchsorted(self.edges, ay, side="right")) - 1


def _ring_edges(lo, hi, m):
    e = lo + (hi - lo) / m * np.arange(m + 1)
    e[0], e[-1] = lo, hi
    return e


def build_ipj_grid(table, p_max=None):
    """Build the ``I_{p,j}`` cells for ``N < p <= p_max`` and ``Lambda^+``."""
    params = table.params
    N = params.capN
    p_max = table.depth if p_max is None else int(p_max)
    if not N < p_max <= table.depth:
        raise ValidationError(f"need capN < p_max <= depth, got p_max={p_max}")
    edges, ps, js = [], [], []
    for p in range(p_max, N, -1):
        m = grid_count(params.epsilon, p)
        e = _ring_edges(table.delta[p], table.delta[p - 1], m)
        edges.append(e[:-1])
        ps.append(np.full(m, p))
        js.append(np.arange(m, 0, -1))
    edges.append([table.delta[N]])
    mN = grid_count(params.epsilon, N)
    eN = _ring_edges(table.delta[N], table.delta[N - 1], mN)
    lam = (float(eN[-2]), float(eN[-1]))
    return IpjGrid(capN=N, p_max=p_max, edges=np.concatenate(edges),
                   cell_p=np.concatenate(ps).astype(np.int64),
                   cell_j=np.concatenate(js).astype(np.int64),
                   lam_plus=lam, delta=float(table.delta[N]))


def ring_cells(table, p):
    """The cells ``I_{p,1..M}`` of one ring as a list, right to left."""
    m = grid_count(table.params.epsilon, p)
    e = _ring_edges(table.delta[p], table.delta[p - 1], m)
    return [GridInterval(p, j, float(e[m - j]), float(e[m - j + 1]))
            for j in range(1, m + 1)]
