"""Refining partitions of ``Lambda``, stopping times, carving and inducing.

Two complementary views of the same construction are provided.

* ``stage_stream`` refines every element of ``Lambda`` globally.  The number
  of elements roughly doubles per step once the images are large, so it is
  meant for depths of a few dozen.
* ``track`` follows the single element that contains a given point.  Its
  cost is linear in the depth, which makes Monte Carlo estimates of masses
  (carved fraction, stopping and return-time tails) possible at depths of
  tens of thousands.

Both views apply the identical floating-point operations to element
images, so an element followed by ``track`` is bit-identical to the one in
the global stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import (
    InsufficientDepthError,
    NotFoundError,
    UnresolvedMassError,
    ValidationError,
)
from .mapcore import build_ipj_grid, critical_table

DEFAULT_P_MAX = 40
UNRESOLVED_CAP = 0.2


@dataclass(frozen=True)
class Engine:
    """Everything the refinement rules need, in array form."""

    params: object
    table: object
    grid: object

    @property
    def E(self):
        return self.grid.edges

    @property
    def lam(self):
        return self.grid.lam_plus

    @property
    def lam_len(self):
        return self.grid.lam_len

    @property
    def delta(self):
        return self.grid.delta

    @property
    def c_ext(self):
        return self.table.c_ext()

    def kernel_args(self):
        return (self.E, self.grid.cell_p, self.grid.cell_j,
                self.lam[0], self.lam[1])


def make_engine(params, p_max=None):
    """Build table and grid.  ``p_max`` defaults to ``min(depth, 40)``."""
    table = critical_table(params)
    if p_max is None:
        p_max = min(params.depth, DEFAULT_P_MAX)
    if p_max <= params.capN:
        raise ValidationError("p_max must exceed capN")
    return Engine(params, table, build_ipj_grid(table, p_max))


def split_free_image(engine, lo, hi):
    """Pieces ``(left, right, kind, p, j)`` of a free image ``[lo, hi]``.

    Kinds are ``free`` (outside ``(-delta, delta)``), ``grid`` (contains
    exactly one ``I_{p,j}``), ``whole`` (unsubdivided image meeting
    ``(-delta, delta)``), ``stop+``/``stop-`` and ``deep`` (below the grid).
    Also returns the number of flagged glue events.
    """
    m = 2 * (engine.E.size - 1) + 8
    scratch = [np.empty(m), np.empty(m), np.empty(m, np.int64),
               np.empty(m, np.int64), np.empty(m, np.int64)]
    out = [np.empty(m), np.empty(m), np.empty(m, np.int64),
           np.empty(m, np.int64), np.empty(m, np.int64)]
    n, flags = K.split_image(float(lo), float(hi), *engine.kernel_args(),
                             *scratch, *out)
    pieces = [(float(out[0][i]), float(out[1][i]), K.KIND_NAMES[out[2][i]],
               int(out[3][i]), int(out[4][i])) for i in range(n)]
    return pieces, int(flags)


def grid_cells_inside(engine, lo, hi):
    """Number of grid cells (both signs) contained in ``[lo, hi]``."""
    E = engine.E
    pos = np.sum((E[:-1] >= lo) & (E[1:] <= hi))
    neg = np.sum((-E[1:] >= lo) & (-E[:-1] <= hi))
    return int(pos + neg)


# ---------------------------------------------------------------------------
# single-element tracking

@dataclass
class PointTrack:
    """History of the element containing one point of ``Lambda``."""

    x0: float
    t_end: int
    unresolved: bool
    key: np.ndarray
    signs: np.ndarray
    stops: np.ndarray
    stop_signs: np.ndarray
    stop_y: np.ndarray
    returns: np.ndarray
    splits: np.ndarray
    flags: int
    image_sum: float

    def segments(self, N, upto=None):
        """Bound stretches ``(k0, p)`` sorted by start, optionally ``k0 < upto``."""
        k0 = np.concatenate(([0], self.returns[:, 0], self.stops)).astype(np.int64)
        p = np.concatenate(([N], self.returns[:, 1],
                            np.full(self.stops.size, N))).astype(np.int64)
        order = np.argsort(k0, kind="stable")
        k0, p = k0[order], p[order]
        if upto is not None:
            keep = k0 < upto
            k0, p = k0[keep], p[keep]
        return k0, p


def track(engine, x0, T):
    """Follow the element of ``x0`` (a point of ``Lambda``) for ``T`` steps."""
    x0 = float(x0)
    lo, hi = engine.lam
    if not (lo <= abs(x0) < hi):
        raise ValidationError("start point must lie in Lambda")
    pr = engine.params
    key = np.empty(T + 1)
    signs = np.zeros(T + 1, np.int8)
    stop_t = np.empty(T + 1, np.int64)
    stop_s = np.empty(T + 1, np.int64)
    stop_y = np.empty(T + 1)
    ret_t = np.empty(T + 1, np.int64)
    ret_p = np.empty(T + 1, np.int64)
    ret_j = np.empty(T + 1, np.int64)
    split_t = np.empty(T + 1, np.int64)
    t_end, status, ns, nr, nsp, flags, isum = K.track_point(
        x0, T, pr.a, pr.epsilon, pr.capN, engine.c_ext, *engine.kernel_args(),
        key, signs, stop_t, stop_s, stop_y, ret_t, ret_p, ret_j, split_t)
    return PointTrack(
        x0=x0, t_end=int(t_end), unresolved=bool(status == K.UNRESOLVED),
        key=key[:t_end + 1].copy(), signs=signs[:t_end + 1].copy(),
        stops=stop_t[:ns].copy(), stop_signs=stop_s[:ns].copy(),
        stop_y=stop_y[:ns].copy(),
        returns=np.stack([ret_t[:nr], ret_p[:nr], ret_j[:nr]], axis=1),
        splits=split_t[:nsp].copy(), flags=int(flags), image_sum=float(isum))


def gap_order(tr, engine, start=0):
    """Order of the gap containing ``f^start x`` in its own carving, or None.

    ``start=0`` asks whether ``x`` itself is deleted; ``start=S`` for a
    stopping time ``S`` asks the same of the landing point, whose partition
    is the pull-back of ``x``'s partition after ``S``.
    """
    N = engine.params.capN
    thr = math.log(engine.delta) + engine.params.epsilon * start
    window = tr.key[start + N:]
    bad = np.nonzero(window < thr)[0]
    if bad.size:
        return int(bad[0]) + N
    return None


def regular_return(tr, engine):
    """First regular return time of ``x`` (None if unresolved) and the chain.

    Returns ``(R, chain, in_omega)`` where ``chain`` lists the candidate
    times ``R_i`` with the gap orders ``g_i`` that rejected them.
    """
    if gap_order(tr, engine, 0) is not None:
        return None, [], False
    chain = []
    if tr.stops.size == 0:
        return None, chain, True
    s = int(tr.stops[0])
    while True:
        g = gap_order(tr, engine, s)
        if g is None:
            return s, chain, True
        chain.append((s, g))
        later = tr.stops[tr.stops > s + g]
        if later.size == 0:
            return None, chain, True
        s = int(later[0])


def branch_of(tr, engine, R):
    """The interval of points sharing ``x``'s history up to the return ``R``,
    i.e. the pull-back of ``Lambda^{sign}``."""
    idx = int(np.nonzero(tr.stops == R)[0][0])
    sgn = tr.stop_signs[idx]
    lo, hi = engine.lam
    ends = (lo, hi) if sgn > 0 else (-hi, -lo)
    k0, p = engine_segments(tr, engine, R)
    xs = [K.pull_back(v, R, tr.signs, k0, p, engine.c_ext, engine.params.a)[0]
          for v in ends]
    return min(xs), max(xs), int(sgn)


def engine_segments(tr, engine, upto):
    return tr.segments(engine.params.capN, upto=upto)


def sample_lambda(engine, count, rng):
    """Lebesgue-uniform points of ``Lambda = Lambda^- u Lambda^+``."""
    lo, hi = engine.lam
    mag = rng.uniform(lo, hi, size=count)
    sgn = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    return sgn * mag


# ---------------------------------------------------------------------------
# carving and inducing by sampling

@dataclass
class CarveResult:
    depth: int
    samples: int
    fraction: float
    stderr: float
    unresolved: float
    gap_orders: np.ndarray
    lemma_bound: float = 0.5

    @property
    def passed(self):
        return self.fraction >= self.lemma_bound


def carved_fraction(engine, samples, depth, seed):
    """Estimate ``|Omega_depth| / |Lambda|`` by following sampled points."""
    rng = np.random.default_rng(seed)
    xs = sample_lambda(engine, samples, rng)
    alive = 0
    unres = 0
    orders = []
    for x in xs:
        tr = track(engine, x, depth)
        g = gap_order(tr, engine, 0)
        if g is not None:
            orders.append(g)
        elif tr.unresolved:
            unres += 1
        else:
            alive += 1
    frac = alive / samples
    return CarveResult(depth=depth, samples=samples, fraction=frac,
                       stderr=math.sqrt(max(frac * (1 - frac), 1e-300) / samples),
                       unresolved=unres / samples,
                       gap_orders=np.array(orders, dtype=np.int64))


@dataclass
class Branch:
    x: float
    R: int
    sign: int
    lo: float
    hi: float


@dataclass
class InducedMap:
    branches: list
    carved_depth: int
    samples: int
    lam_mass: float
    omega_fraction: float
    R_values: np.ndarray
    unresolved: float
    tail_n: np.ndarray
    tail_mass: np.ndarray
    fit: tuple
    distortion: dict
    generations: int
    base_points: np.ndarray = field(repr=False, default=None)

    @property
    def tail_log_mass(self):
        with np.errstate(divide="ignore"):
            return np.log(self.tail_mass)


def _fit_log_tail(n, mass, lo):
    keep = (n >= lo) & (mass > 0)
    if keep.sum() < 3:
        return (float("nan"), float("nan"), float("nan"))
    x, y = n[keep].astype(float), np.log(mass[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0]))


def induce(engine, samples, depth, seed, generations=3, branch_checks=50,
           tail_points=200, strict=True):
    """Return-time statistics of the induced map, estimated by sampling.

    Points are drawn from normalized Lebesgue measure on ``Lambda``; those
    surviving the carving to ``depth`` represent ``nu_0``.  With
    ``generations > 1`` the landing points of resolved returns are followed
    again, which averages push-forwards of ``nu_0`` under the induced map.
    """
    pr = engine.params
    rng = np.random.default_rng(seed)
    starts = sample_lambda(engine, samples, rng)
    lam_mass = 2.0 * engine.lam_len
    R_all, unres, in_omega, branches, base = [], 0, 0, [], []
    distortion = {"checked": 0, "worst": 0.0, "bound_factor": 3.0}
    pending = list(starts)
    total_base = 0
    for gen in range(generations):
        nxt = []
        for x in pending:
            tr = track(engine, x, depth)
            R, _, ok = regular_return(tr, engine)
            if not ok:
                continue
            total_base += 1
            if gen == 0:
                in_omega += 1
            base.append(x)
            if R is None:
                unres += 1
                R_all.append(depth + 1)
                continue
            R_all.append(R)
            if len(branches) < branch_checks:
                lo, hi, sgn = branch_of(tr, engine, R)
                branches.append(Branch(float(x), int(R), sgn, lo, hi))
                _check_branch_distortion(tr, engine, R, sgn, rng, distortion)
            idx = int(np.nonzero(tr.stops == R)[0][0])
            nxt.append(float(tr.stop_y[idx]))
        pending = nxt
    if total_base == 0:
        raise UnresolvedMassError("no sampled point survived the carving")
    R_arr = np.array(R_all, dtype=np.int64)
    unresolved = unres / total_base
    omega_fraction = in_omega / samples
    tail_n = np.unique(np.linspace(0, depth, tail_points).astype(np.int64))
    counts = np.array([(R_arr > n).sum() for n in tail_n], dtype=float)
    tail_mass = lam_mass * omega_fraction * counts / total_base
    fit = _fit_log_tail(tail_n, tail_mass, pr.capN)
    out = InducedMap(branches=branches, carved_depth=depth, samples=samples,
                     lam_mass=lam_mass, omega_fraction=omega_fraction,
                     R_values=R_arr, unresolved=unresolved, tail_n=tail_n,
                     tail_mass=tail_mass, fit=fit, distortion=distortion,
                     generations=generations, base_points=np.array(base))
    if strict and unresolved > UNRESOLVED_CAP:
        raise UnresolvedMassError(
            f"{unresolved:.1%} of the carved mass has no return within depth {depth}")
    return out


def _check_branch_distortion(tr, engine, R, sgn, rng, report, pairs=4):
    lo, hi = engine.lam
    if sgn < 0:
        lo, hi = -hi, -lo
    k0, p = engine_segments(tr, engine, R)
    a = engine.params.a
    for _ in range(pairs):
        u, v = rng.uniform(lo, hi, size=2)
        _, lu = K.pull_back(u, R, tr.signs, k0, p, engine.c_ext, a)
        _, lv = K.pull_back(v, R, tr.signs, k0, p, engine.c_ext, a)
        lhs = abs(math.expm1(lu - lv))
        rhs = 3.0 * abs(u - v) / engine.lam_len
        report["checked"] += 1
        if rhs > 0:
            report["worst"] = max(report["worst"], lhs / rhs)
    report["passed"] = report["worst"] <= 1.0


@dataclass
class Tower:
    levels: np.ndarray
    level_mass: np.ndarray
    weights: np.ndarray
    rho: float
    mean_R: float
    C1: float
    C2: float
    truncated_mass: float

    @staticmethod
    def step(x_level, R, induced_image):
        """One step of the tower map: climb, or fall back to the base."""
        l = x_level + 1
        return (None, l) if l < R else (induced_image, 0)


def build_tower(induced, bins=20):
    """Level masses ``|{R > l}|`` and the lifted measure ``mu_hat``.

    ``nu_0`` is the empirical law of the sampled base points; ``mu_hat``
    weights level ``l`` by ``nu_0(R > l) / nu_0(R)``.  Returns with
    unresolved returns counted at ``depth + 1``, which truncates the
    last level; the truncated share is reported.
    """
    R = induced.R_values
    L = int(R.max())
    counts = np.bincount(R, minlength=L + 1)[:L + 1]
    surv = (R.size - np.cumsum(counts)) / R.size
    levels = np.arange(L)
    above = surv[:L]
    level_mass = above * induced.lam_mass * induced.omega_fraction
    mean_R = float(above.sum())
    weights = above / mean_R
    # density of nu_k against Lebesgue on the base, by |x| bins
    x = np.abs(induced.base_points)
    edges = np.linspace(x.min(), x.max(), bins + 1) if x.size > 1 else np.array([0, 1])
    hist, _ = np.histogram(x, bins=edges)
    dens = hist / max(hist.mean(), 1e-300)
    dens = dens[hist > 0]
    base_mass = induced.lam_mass * induced.omega_fraction
    C1 = float(dens.min() / (base_mass * mean_R)) if dens.size else float("nan")
    C2 = float(dens.max() / (base_mass * mean_R)) if dens.size else float("nan")
    return Tower(levels=levels, level_mass=level_mass, weights=weights,
                 rho=float(weights[0]), mean_R=mean_R, C1=C1, C2=C2,
                 truncated_mass=float((R > induced.carved_depth).mean()))


# ---------------------------------------------------------------------------
# global refinement

@dataclass
class LabeledInterval:
    """An element of the partition together with its image and history."""

    lo: float
    hi: float
    img_lo: float
    img_hi: float
    in_bind: bool
    k0: int
    pb: int
    wl: float
    wr: float
    history: tuple = ()
    stops: tuple = ()
    signs: tuple = ()
    image_sum: float = 0.0
    alive: bool = True
    unresolved: bool = False
    kind: str = "free"

    @property
    def bound_until(self):
        return self.k0 + self.pb if self.in_bind else None

    def state(self, n):
        return "bound" if self.in_bind and n < self.k0 + self.pb else "free"

    @property
    def length(self):
        return self.hi - self.lo


@dataclass
class PartitionStage:
    n: int
    elements: list
    gaps: list = field(default_factory=list)
    new_stops: list = field(default_factory=list)
    deep: list = field(default_factory=list)
    flags: int = 0
    cuts: list = field(default_factory=list)

    @property
    def images(self):
        return [(e.img_lo, e.img_hi) for e in self.elements]


@dataclass
class StoppingRecord:
    k: int
    lo: float
    hi: float
    S: int
    sign: int


def initial_stage(engine):
    """Stage 0: the two halves of ``Lambda``, bound for ``N`` steps."""
    lo, hi = engine.lam
    N = engine.params.capN
    els = []
    for s in (-1, 1):
        a, b = (lo, hi) if s > 0 else (-hi, -lo)
        els.append(LabeledInterval(lo=a, hi=b, img_lo=a, img_hi=b, in_bind=True,
                                   k0=0, pb=N, wl=a, wr=b, signs=(s,),
                                   image_sum=b - a))
    return PartitionStage(n=0, elements=els)


def _advance(el, engine, n):
    """Push the element image from time ``n-1`` to ``n`` (same arithmetic as
    the compiled tracker)."""
    a = engine.params.a
    ce = engine.c_ext
    if el.in_bind:
        i = n - 1 - el.k0
        ci = ce[i]
        wl = -a * el.wl * (2.0 * ci + el.wl)
        wr = -a * el.wr * (2.0 * ci + el.wr)
        cn = ce[i + 1]
        zl, zr = cn + wl, cn + wr
        lo, hi = (zl, zr) if zl <= zr else (zr, zl)
        in_bind = n != el.k0 + el.pb
        return LabeledInterval(el.lo, el.hi, lo, hi, in_bind, el.k0, el.pb, wl, wr,
                               el.history, el.stops, el.signs, el.image_sum,
                               kind=el.kind)
    fl = 1.0 - a * el.img_lo * el.img_lo
    fr = 1.0 - a * el.img_hi * el.img_hi
    lo, hi = (fl, fr) if fl <= fr else (fr, fl)
    return LabeledInterval(el.lo, el.hi, lo, hi, False, el.k0, el.pb, el.wl, el.wr,
                           el.history, el.stops, el.signs, el.image_sum, kind=el.kind)


def _element_segments(el, N):
    k0 = [0] + [h[0] for h in el.history] + [s[0] for s in el.stops]
    p = [N] + [h[1] for h in el.history] + [N] * len(el.stops)
    order = np.argsort(k0, kind="stable")
    return (np.asarray(k0, np.int64)[order], np.asarray(p, np.int64)[order])


def _pull(el, engine, v, n):
    k0, p = _element_segments(el, engine.params.capN)
    keep = k0 < n
    signs = np.asarray(el.signs, dtype=np.int8)
    return K.pull_back(float(v), n, signs, k0[keep], p[keep], engine.c_ext,
                       engine.params.a)[0]


def refine(stage, engine):
    """Apply the refinement rules at time ``n = stage.n + 1``."""
    n = stage.n + 1
    pr = engine.params
    N = pr.capN
    delta = engine.delta
    log_thr = math.log(delta) - pr.epsilon * n
    out = PartitionStage(n=n, elements=[])
    for el in stage.elements:
        adv = _advance(el, engine, n)
        children = [adv]
        cut = (not adv.in_bind and n >= N
               and ((adv.img_lo < delta and adv.img_hi > -delta)
                    or adv.img_hi - adv.img_lo >= 3.0 * engine.lam_len))
        if cut:
            pieces, flags = split_free_image(engine, adv.img_lo, adv.img_hi)
            out.flags += flags
            if len(pieces) > 1 or pieces[0][2] != "free":
                children = _children(adv, pieces, engine, n, out)
        for ch in children:
            sgn = 1 if ch.img_lo > 0 else -1
            ch.signs = ch.signs + (sgn,)
            ch.image_sum = ch.image_sum + (ch.img_hi - ch.img_lo)
            if ch.unresolved:
                out.deep.append(ch)
                continue
            if n >= N:
                if ch.img_lo <= 0.0 <= ch.img_hi:
                    d = 0.0
                else:
                    d = ch.img_lo if ch.img_lo > 0 else -ch.img_hi
                if d == 0.0 or math.log(d) < log_thr:
                    ch.alive = False
                    out.gaps.append((n, ch.lo, ch.hi))
                    continue
            out.elements.append(ch)
    out.elements.sort(key=lambda e: e.lo)
    return out


def _children(adv, pieces, engine, n, out):
    N = engine.params.capN
    orient = 1
    for s in adv.signs:
        orient *= -s
    cuts = [_pull(adv, engine, r, n) for (_, r, *_rest) in pieces[:-1]]
    xb = [adv.lo] + cuts + [adv.hi] if orient > 0 else [adv.hi] + cuts + [adv.lo]
    if len(pieces) > 1:
        out.cuts.append(n)
    kids = []
    for i, (l, r, kind, p, j) in enumerate(pieces):
        x1, x2 = xb[i], xb[i + 1]
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
        ch = LabeledInterval(lo, hi, l, r, False, adv.k0, adv.pb, adv.wl, adv.wr,
                             adv.history, adv.stops, adv.signs, adv.image_sum,
                             kind=kind)
        if kind in ("grid", "whole"):
            ch.history = adv.history + ((n, p, j),)
            ch.in_bind, ch.k0, ch.pb, ch.wl, ch.wr = True, n, p, l, r
        elif kind in ("stop+", "stop-"):
            sgn = 1 if kind == "stop+" else -1
            ch.stops = adv.stops + ((n, sgn),)
            ch.in_bind, ch.k0, ch.pb, ch.wl, ch.wr = True, n, N, l, r
            out.new_stops.append(StoppingRecord(len(ch.stops), lo, hi, n, sgn))
        elif kind == "deep":
            ch.unresolved = True
        kids.append(ch)
    return kids


def stage_stream(engine, depth):
    """Yield stages ``0..depth`` (stages before ``N`` are identical)."""
    st = initial_stage(engine)
    yield st
    for _ in range(depth):
        st = refine(st, engine)
        yield st


def stopping_times(stages):
    """Collect stopping records from a stage stream."""
    recs = []
    for st in stages:
        recs.extend(st.new_stops)
    return recs


def check_stage(stage, prev, engine, tol=1e-10):
    """Structural invariants of one refinement step; returns a dict of bools."""
    els = stage.elements
    disjoint = all(els[i].hi <= els[i + 1].lo + 1e-300 for i in range(len(els) - 1))
    nested = True
    if prev is not None:
        plo = np.array([e.lo for e in prev.elements])
        phi = np.array([e.hi for e in prev.elements])
        for e in els + [g for g in []]:
            i = np.searchsorted(plo, e.lo, side="right") - 1
            if i < 0 or e.hi > phi[i] * (1 + 1e-12) + 1e-300 * 0 and e.hi > phi[i]:
                nested = False
                break
    one_cell = True
    for e in els:
        if e.history and e.history[-1][0] == stage.n and e.kind == "grid":
            c = grid_cells_inside(engine, e.img_lo, e.img_hi)
            if c != 1:
                one_cell = False
    return {"disjoint": disjoint, "nested": nested, "one_cell": one_cell}


@dataclass
class CarveLedger:
    depth: int
    gaps: list
    lambda_mass: float
    alive_mass: float
    deep_mass: float

    @property
    def fraction(self):
        return self.alive_mass / self.lambda_mass

    def element_fraction(self, lo, hi):
        """Carved fraction of an interval: share not covered by gaps."""
        lost = sum(max(0.0, min(hi, g[2]) - max(lo, g[1])) for g in self.gaps)
        return 1.0 - lost / (hi - lo)


def carve(engine, depth):
    """Deletion ledger from the global stream (small depths only)."""
    gaps, deep = [], []
    st = None
    for st in stage_stream(engine, depth):
        gaps.extend(st.gaps)
        deep.extend(st.deep)
    alive = sum(e.length for e in st.elements)
    lam = 2.0 * engine.lam_len
    return CarveLedger(depth=depth, gaps=gaps, lambda_mass=lam, alive_mass=alive,
                       deep_mass=sum(e.length for e in deep))


# ---------------------------------------------------------------------------
# escape tails and quick falls

@dataclass
class EscapeTail:
    m: int
    n: np.ndarray
    mass: np.ndarray
    unresolved: float
    C_fit: float
    zeta_fit: float

    @property
    def log_mass(self):
        with np.errstate(divide="ignore"):
            return np.log(self.mass)


def escape_tail(engine, element, m, n_values, samples, seed):
    """Conditional masses ``|{S >= m + n} | omega|`` for an element of stage ``m-1``.

    ``S`` is the first stopping time at or after ``m``, the time at which
    points of ``omega`` leave ``omega``'s stopping family.  Masses are
    relative to ``|omega|`` and estimated by following sampled points.
    """
    n_values = np.asarray(n_values, dtype=np.int64)
    eps = engine.params.epsilon
    if np.any(n_values < math.sqrt(eps) * m):
        raise ValidationError("escape tail needs n >= sqrt(epsilon) * m")
    T = int(m + n_values.max())
    rng = np.random.default_rng(seed)
    xs = rng.uniform(element.lo, element.hi, size=samples)
    first = np.empty(samples, dtype=np.int64)
    unres = np.zeros(samples, dtype=bool)
    for i, x in enumerate(xs):
        tr = track(engine, x, T)
        later = tr.stops[tr.stops >= m]
        if later.size:
            first[i] = later[0]
        else:
            first[i] = T + 1
            unres[i] = tr.unresolved
    mass = np.array([(first >= m + n).mean() for n in n_values])
    frac_unres = float(unres.mean())
    if frac_unres > UNRESOLVED_CAP:
        raise InsufficientDepthError(
            f"{frac_unres:.1%} of the element is unresolved on the requested range")
    keep = mass > 0
    if keep.sum() >= 2:
        A = np.vstack([n_values[keep], np.ones(keep.sum())]).T
        coef = np.linalg.lstsq(A, np.log(mass[keep]), rcond=None)[0]
        zeta, C = math.exp(coef[0]), math.exp(coef[1])
    else:
        zeta, C = float("nan"), float("nan")
    return EscapeTail(m=m, n=n_values, mass=mass, unresolved=frac_unres,
                      C_fit=C, zeta_fit=zeta)


@dataclass
class QuickFall:
    n: int
    r: int
    fraction: float
    threshold: float

    @property
    def passed(self):
        return self.fraction >= self.threshold


def quick_fall(engine, element, n, n0=0, budget=200000):
    """Largest stopping piece of ``element`` (from stage ``n``) within
    ``n <= r <= (1 + eps^(1/3)) n``, as a fraction of the element's length."""
    eps = engine.params.epsilon
    if n < n0:
        raise ValidationError(f"quick fall needs n >= n0 = {n0}")
    r_max = int(math.floor((1.0 + eps ** (1.0 / 3.0)) * n))
    best, best_r = 0.0, None
    if element.stops and element.stops[-1][0] == n:
        best, best_r = 1.0, n
    st = PartitionStage(n=n, elements=[element])
    for t in range(n + 1, r_max + 1):
        st = refine(st, engine)
        for rec in st.new_stops:
            frac = (rec.hi - rec.lo) / element.length
            if frac > best:
                best, best_r = frac, rec.S
        if len(st.elements) > budget:
            break
    if best_r is None:
        raise NotFoundError(f"no stop in the window [{n}, {r_max}]")
    return QuickFall(n=n, r=best_r, fraction=best,
                     threshold=math.exp(-(eps ** (1.0 / 3.0)) * n))
