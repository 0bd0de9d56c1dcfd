"""Finite-depth checks of the distortion and expansion estimates.

Each verifier samples the hypothesis of one estimate, evaluates both sides
with the computed (floating point) orbit, and reports the worst margin.
Margins are expressed in log form where the quantities span many orders of
magnitude, so ``margin >= 0`` always means the inequality held.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamplesError, ValidationError
from .mapcore import critical_table, ring_cells, shadow

LEMMA_IDS = ("dist", "exp", "reclem1", "reclem2", "exp2", "holder_a",
             "holder_b", "holder_c", "bdd", "subl")
MIN_QUALIFYING = 10


@dataclass
class LemmaReport:
    """Outcome of one verifier.

    ``worst`` is the extreme observed value of the checked quantity and
    ``bound`` the value it is compared against; ``margin`` is their signed
    difference oriented so that ``margin >= 0`` means the inequality held.
    """

    lemma: str
    worst: float
    bound: float
    margin: float
    passed: bool
    samples: int
    vacuous: bool = False
    failures: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"lemma": self.lemma, "worst": self.worst, "bound": self.bound,
                "margin": self.margin, "passed": self.passed,
                "samples": self.samples, "vacuous": self.vacuous,
                "failures": list(self.failures), **self.extra}


def orbit_logs(a, x, n):
    """Orbits and cumulative ``log|Df^k|`` for an array of starts.

    Returns ``(orbit, cum)`` with ``orbit[k] = f^k x`` for ``k <= n`` and
    ``cum[k] = log|Df^k(x)|`` (``cum[0] = 0``), summed left to right.
    """
    x = np.asarray(x, dtype=float)
    orbit = np.empty((n + 1,) + x.shape)
    cum = np.zeros((n + 1,) + x.shape)
    orbit[0] = x
    with np.errstate(divide="ignore"):
        for k in range(n):
            y = orbit[k]
            cum[k + 1] = cum[k] + np.log(2.0 * a * np.abs(y))
            orbit[k + 1] = np.clip(1.0 - a * y * y, -1.0, 1.0)
    return orbit, cum


def _need(count, lemma):
    if count < MIN_QUALIFYING:
        raise InsufficientSamplesError(
            f"{lemma}: only {count} samples satisfy the hypothesis (need {MIN_QUALIFYING})")


def verify_core_lemma(lemma_id, params, n=None, sample_count=1000, rng_seed=0):
    """Check one estimate on sampled points.

    Parameters
    ----------
    lemma_id : str
        One of ``LEMMA_IDS``.
    params : MapParams
    n : int, optional
        Orbit length, or the largest ``p`` for the grid checks.  Defaults
        depend on the check.
    sample_count : int
        Number of sampled points or pairs (per ``p`` for the grid checks).
    rng_seed : int
    """
    if lemma_id not in LEMMA_IDS:
        raise ValidationError(f"unknown lemma id {lemma_id!r}; choose from {LEMMA_IDS}")
    if sample_count < 1:
        raise ValidationError("sample_count must be positive")
    rng = np.random.default_rng(rng_seed)
    table = critical_table(params)
    return _CHECKS[lemma_id](params, table, n, sample_count, rng)


def _dist(params, table, n, count, rng):
    n = 10 if n is None else int(n)
    if not 1 <= n <= table.depth:
        raise ValidationError("dist needs 1 <= n <= depth")
    Dn = table.D[n]
    x = rng.uniform(1.0 - Dn, 1.0, count)
    y = rng.uniform(1.0 - Dn, 1.0, count)
    _, cx = orbit_logs(params.a, x, n)
    _, cy = orbit_logs(params.a, y, n)
    lr = cx[n] - cy[n]
    ratio = np.exp(lr)
    sep = np.abs(x - y)
    ok = sep > 0
    lip = np.abs(ratio[ok] - 1.0) * Dn / sep[ok]
    worst = float(ratio.max())
    worst_lip = float(lip.max()) if lip.size else 0.0
    passed = worst <= 2.0 and worst_lip <= 1.0
    return LemmaReport("dist", worst, 2.0, 2.0 - worst, passed, count,
                       extra={"worst_lipschitz": worst_lip, "D_n": float(Dn), "n": n})


def _expansion(lemma, params, table, n, count, rng, radius, rate):
    n = 20 if n is None else int(n)
    if n == 0:
        return LemmaReport(lemma, float("nan"), float("nan"), 0.0, True, 0,
                           vacuous=True)
    x = rng.uniform(-1.0, 1.0, count)
    orbit, cum = orbit_logs(params.a, x, n)
    outside = np.all(np.abs(orbit[:n]) >= radius, axis=0)
    _need(int(outside.sum()), lemma)
    L = cum[n][outside]
    m1 = L - (math.log(radius) + rate * n)
    inside = np.abs(orbit[n][outside]) < radius
    m2 = L[inside] - rate * n
    worst = float(min(m1.min(), m2.min() if m2.size else np.inf))
    return LemmaReport(lemma, float(L.min()), math.log(radius) + rate * n, worst,
                       worst >= 0.0, int(outside.sum()),
                       extra={"n": n, "returning": int(inside.sum()),
                              "returning_margin": float(m2.min()) if m2.size else None})


def _exp(params, table, n, count, rng):
    return _expansion("exp", params, table, n, count, rng,
                      float(table.deltaHat), params.lam)


def _exp2(params, table, n, count, rng):
    return _expansion("exp2", params, table, n, count, rng,
                      float(table.deltaN), params.lam / 3.0)


def _p_range(params, table, n, lo):
    hi = table.depth if n is None else int(n)
    hi = min(hi, table.depth)
    if hi < lo:
        raise ValidationError(f"need n >= {lo}")
    return range(lo, hi + 1)


def _reclem1(params, table, n, count, rng):
    margins_a, margins_b, fails = [], [], []
    total = 0
    for p in _p_range(params, table, n, 11):
        x = rng.uniform(table.delta[p], table.delta[p - 1], count)
        _, cum = orbit_logs(params.a, x, p)
        ma = cum[p] - params.lam * p / 3.0
        mb = -2.0 / params.lam * np.log(x) - p
        margins_a.append(ma.min())
        margins_b.append(mb.min())
        if ma.min() < 0 or mb.min() < 0:
            fails.append(p)
        total += count
    _need(total, "reclem1")
    worst = float(min(min(margins_a), min(margins_b)))
    return LemmaReport("reclem1", worst, 0.0, worst, not fails, total,
                       failures=fails,
                       extra={"margin_a": float(min(margins_a)),
                              "margin_b": float(min(margins_b))})


def _reclem2(params, table, n, count, rng):
    n = min(200 if n is None else int(n), table.depth)
    L = table.logD[: n + 1]
    i, j = np.triu_indices(n + 1, k=1)
    val = L[j] - L[i] + params.alpha * np.sqrt(j)
    worst = float(val.min())
    k = int(val.argmin())
    return LemmaReport("reclem2", worst, 0.0, worst, worst >= 0.0, int(val.size),
                       extra={"argmin": (int(i[k]), int(j[k]))})


def _cell_images(table, p):
    """Endpoints of ``f^p`` on the cells of ring ``p``, via deviations."""
    cells = ring_cells(table, p)
    ends = np.array([[c.left, c.right] for c in cells])
    w, logdf = shadow(table, ends, -1, p)
    return cells, ends, w[p], logdf


def _holder_a(params, table, n, count, rng):
    eps = params.epsilon
    worst, fails, total = np.inf, [], 0
    for p in _p_range(params, table, n, params.capN + 1):
        cells, ends, wp, _ = _cell_images(table, p)
        ln = np.log(np.abs(wp[:, 1] - wp[:, 0])) + 5.0 * eps * p
        worst = min(worst, ln.min())
        if ln.min() < 0:
            fails.append(p)
        total += len(cells)
    return LemmaReport("holder_a", float(worst), 0.0, float(worst), not fails, total,
                       failures=fails)


def _holder_b(params, table, n, count, rng):
    eps = params.epsilon
    worst, fails, total = np.inf, [], 0
    for p in _p_range(params, table, n, params.capN + 1):
        for c in ring_cells(table, p):
            m = (1.0 + eps / 3.0) * math.log(c.left) - math.log(c.right - c.left)
            worst = min(worst, m)
            total += 1
            if m < 0 and p not in fails:
                fails.append(p)
    return LemmaReport("holder_b", float(worst), 0.0, float(worst), not fails, total,
                       failures=fails)


def _holder_c(params, table, n, count, rng):
    eps2 = params.epsilon ** 2
    worst, fails, total = np.inf, [], 0
    for p in _p_range(params, table, n, params.capN + 1):
        for c in ring_cells(table, p):
            xy = rng.uniform(c.left, c.right, size=(2, count))
            w, logdf = shadow(table, xy, -1, p)
            lhs = logdf[:, 0].sum(axis=0) - logdf[:, 1].sum(axis=0)
            rhs = np.abs(w[p][0] - w[p][1]) ** eps2
            m = float((rhs - lhs).min())
            worst = min(worst, m)
            total += count
            if m < 0 and p not in fails:
                fails.append(p)
    return LemmaReport("holder_c", float(worst), 0.0, float(worst), not fails, total,
                       failures=fails)


def _tracks(params, n, count, rng):
    from .partition import make_engine, sample_lambda, track
    eng = make_engine(params)
    xs = sample_lambda(eng, count, rng)
    return eng, [track(eng, x, n) for x in xs]


def _bdd(params, table, n, count, rng):
    n = 2000 if n is None else int(n)
    eng, trs = _tracks(params, n, count, rng)
    sums = np.array([t.image_sum for t in trs])
    bound = 10.0 / eng.delta
    worst = float(sums.max())
    return LemmaReport("bdd", worst, bound, bound - worst, worst <= bound, len(trs),
                       extra={"n": n, "unresolved": int(sum(t.unresolved for t in trs))})


def _subl(params, table, n, count, rng):
    """Gap after a free return, measured to the element's next partition event.

    A partition event is any return, stopping time or cut of the element's
    image.  The gap to the next free return alone is reported as well; it
    is not bounded when a stopping time intervenes.
    """
    n = 5000 if n is None else int(n)
    eng, trs = _tracks(params, n, count, rng)
    ratios, ratios_ret = [], []
    for tr in trs:
        rt, rp = tr.returns[:, 0], tr.returns[:, 1]
        events = np.unique(np.concatenate((rt, tr.stops, tr.splits)))
        for k, (t, p) in enumerate(zip(rt, rp)):
            later = events[events > t]
            if later.size:
                ratios.append((later[0] - t) / (2.0 * p))
            if k + 1 < rt.size:
                ratios_ret.append((rt[k + 1] - t) / (2.0 * p))
    _need(len(ratios), "subl")
    worst = float(max(ratios))
    return LemmaReport("subl", worst, 1.0, 1.0 - worst, worst <= 1.0, len(ratios),
                       extra={"worst_next_return_ratio":
                              float(max(ratios_ret)) if ratios_ret else None})


_CHECKS = {"dist": _dist, "exp": _exp, "exp2": _exp2, "reclem1": _reclem1,
           "reclem2": _reclem2, "holder_a": _holder_a, "holder_b": _holder_b,
           "holder_c": _holder_c, "bdd": _bdd, "subl": _subl}
