"""Large-deviation estimates for Birkhoff averages of ``f_a``.

Three independent routes to the rate of ``mu{S_n phi / n >= b}``:

* direct Monte Carlo over ``mu``-distributed starts (``deviation_rate``),
* the Legendre transform of the scaled cumulant generating function
  (``pressure_cgf`` then ``legendre_transform``),
* the variational free-energy envelope built from horseshoe equilibria and
  periodic orbits (``variational_envelope``).

``ldp_crosscheck`` compares the three.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import logsumexp
from scipy.stats import beta

from . import thermo
from .errors import (CensoredError, CoverageError, InconclusiveError,
                     NonConvexError, ValidationError)

DEFAULT_BURN_IN = 1000
CHUNK = 200_000
CENSOR_LEVEL = 0.05


@dataclass(frozen=True)
class Observable:
    """A real function on ``[-1, 1]`` with a declared Lipschitz constant.

    ``singular`` marks builtins such as ``log|Df|`` that are not Lipschitz.
    """

    id: str
    eval: object
    lipschitz: float = float("inf")
    singular: bool = False

    def __call__(self, x):
        return self.eval(x)

    def spot_check(self, samples=1000, seed=0):
        """Largest ``|phi(x) - phi(y)| / |x - y|`` over random pairs."""
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(-1, 1, (2, samples))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(self.eval(x) - self.eval(y)) / np.abs(x - y)
        return float(np.nanmax(r))


def observable(name, a=2.0):
    """Builtin observables: ``x``, ``x2`` and ``logdf``."""
    if name == "x":
        return Observable("x", lambda x: np.asarray(x, dtype=float), 1.0)
    if name == "x2":
        return Observable("x2", lambda x: np.asarray(x, dtype=float) ** 2, 2.0)
    if name == "logdf":
        def logdf(x):
            with np.errstate(divide="ignore"):
                return np.log(2.0 * a * np.abs(np.asarray(x, dtype=float)))
        return Observable("logdf", logdf, float("inf"), singular=True)
    if name == "const":
        return Observable("const", lambda x: np.ones_like(np.asarray(x, dtype=float)), 0.0)
    raise ValidationError(f"unknown observable {name!r}")


def _step(x, a, rng):
    """One step of ``f``.  At ``a = 2`` a rounded orbit that lands exactly on
    the fixed point ``-1`` stays there forever, which a true orbit of a
    Lebesgue-typical start never does; such points are redrawn."""
    y = 1.0 - a * x * x
    stuck = y == -1.0
    if stuck.any():
        y[stuck] = rng.uniform(-1.0, 1.0, int(stuck.sum()))
    return y


def _starts(rng, count, a, burn_in):
    x = rng.uniform(-1.0, 1.0, count)
    for _ in range(burn_in):
        x = _step(x, a, rng)
    return x


def sample_mu(params, count, burn_in=DEFAULT_BURN_IN, seed=0, block=1000):
    """Points along orbits of Lebesgue-uniform starts, after a burn-in.

    Each start contributes up to ``block`` consecutive orbit points; points
    from different starts are independent, points along one orbit are not.
    """
    if count < 0 or burn_in < 0:
        raise ValidationError("count and burn_in must be nonnegative")
    if count == 0:
        return np.empty(0)
    rng = np.random.default_rng(seed)
    n_starts = -(-count // block)
    x = _starts(rng, n_starts, params.a, burn_in)
    out = np.empty((block, n_starts))
    for i in range(block):
        out[i] = x
        x = _step(x, params.a, rng)
    return out.T.reshape(-1)[:count]


def birkhoff_mean(params, phi, count, burn_in=DEFAULT_BURN_IN, seed=0, block=1000):
    """Mean of ``phi`` over ``count`` sampled points without storing them."""
    rng = np.random.default_rng(seed)
    n_starts = -(-count // block)
    x = _starts(rng, n_starts, params.a, burn_in)
    total = 0.0
    taken = 0
    for i in range(block):
        need = min(n_starts, count - taken)
        if need <= 0:
            break
        total += math.fsum(phi(x[:need]))
        taken += need
        x = _step(x, params.a, rng)
    return total / taken


def lyapunov_estimate(params, count=10 ** 7, burn_in=DEFAULT_BURN_IN, seed=0):
    """Birkhoff estimate of ``int log|Df| dmu``."""
    return birkhoff_mean(params, observable("logdf", params.a), count, burn_in, seed)


def birkhoff_sums(params, observables, n_grid, samples, seed, burn_in=DEFAULT_BURN_IN):
    """``S_n phi_j`` at each ``n`` of ``n_grid`` for independent starts.

    Yields ``(chunk_size, sums)`` with ``sums`` of shape
    ``(len(n_grid), len(observables), chunk_size)``.
    """
    n_grid = np.asarray(n_grid, dtype=np.int64)
    n_max = int(n_grid.max())
    rng = np.random.default_rng(seed)
    done = 0
    while done < samples:
        m = min(CHUNK, samples - done)
        x = _starts(rng, m, params.a, burn_in)
        acc = np.zeros((len(observables), m))
        out = np.empty((n_grid.size, len(observables), m))
        pos = 0
        for step in range(1, n_max + 1):
            for j, ob in enumerate(observables):
                acc[j] += ob(x)
            x = _step(x, params.a, rng)
            while pos < n_grid.size and n_grid[pos] == step:
                out[pos] = acc
                pos += 1
        yield m, out
        done += m


@dataclass
class RateSeries:
    observables: list
    thresholds: list
    n_grid: np.ndarray
    hits: np.ndarray
    samples: int
    values: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    censored: np.ndarray
    fit: tuple
    seed: int

    def rows(self):
        for i, n in enumerate(self.n_grid):
            yield (int(n), float(self.values[i]), float(self.ci_lo[i]),
                   float(self.ci_hi[i]), bool(self.censored[i]))


def _fit_rate(n, logp, var):
    """Weighted fit ``log p = rate * n + c``; returns ``(rate, c, stderr)``."""
    n = np.asarray(n, dtype=float)
    if n.size < 2:
        return (float(logp[0] / n[0]) if n.size else float("nan"), 0.0, float("inf"))
    w = 1.0 / np.maximum(var, 1e-12)
    A = np.vstack([n, np.ones_like(n)]).T
    Aw = A * w[:, None]
    cov = np.linalg.inv(A.T @ Aw)
    coef = cov @ (Aw.T @ logp)
    resid = logp - A @ coef
    if n.size > 2:
        chi2 = float(resid @ (w * resid)) / (n.size - 2)
        cov = cov * max(chi2, 1.0)
    return float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0]))


def deviation_rate(params, observables, thresholds, n_grid, samples_per_n, seed,
                   burn_in=DEFAULT_BURN_IN):
    """Monte Carlo estimate of ``(1/n) log mu{S_n phi_j / n >= b_j for all j}``.

    The same independent starts serve every ``n``.  Cells without hits are
    censored at the one-sided 95% upper bound ``1 - 0.05**(1/M)``.
    """
    observables = list(observables)
    thresholds = np.asarray(thresholds, dtype=float)
    if len(observables) == 0 or len(observables) != thresholds.size:
        raise ValidationError("need one threshold per observable")
    n_grid = np.unique(np.asarray(n_grid, dtype=np.int64))
    if n_grid.size == 0 or n_grid[0] < 1:
        raise ValidationError("n_grid must hold positive integers")
    M = int(samples_per_n)
    hits = np.zeros(n_grid.size, dtype=np.int64)
    for _, sums in birkhoff_sums(params, observables, n_grid, M, seed, burn_in):
        avg = sums / n_grid[:, None, None]
        ok = np.all(avg >= thresholds[None, :, None], axis=1)
        hits += ok.sum(axis=1)
    p = hits / M
    censored = hits == 0
    if censored.all():
        raise CensoredError("no sampled start reached the thresholds at any n")
    lo = np.where(hits > 0, beta.ppf(CENSOR_LEVEL / 2, hits, M - hits + 1), 0.0)
    hi = np.where(hits < M, beta.ppf(1 - CENSOR_LEVEL / 2, hits + 1, M - hits), 1.0)
    hi = np.where(censored, 1.0 - CENSOR_LEVEL ** (1.0 / M), hi)
    with np.errstate(divide="ignore"):
        est = np.where(censored, hi, p)
        values = np.log(est) / n_grid
        ci_lo = np.log(lo) / n_grid
        ci_hi = np.log(hi) / n_grid
    keep = ~censored
    var = np.where(p[keep] < 1, (1 - p[keep]) / (M * np.maximum(p[keep], 1e-300)),
                   1.0 / M ** 2)
    fit = _fit_rate(n_grid[keep], np.log(p[keep]), var)
    return RateSeries(observables=[o.id for o in observables],
                      thresholds=thresholds.tolist(), n_grid=n_grid, hits=hits,
                      samples=M, values=values, ci_lo=ci_lo, ci_hi=ci_hi,
                      censored=censored, fit=fit, seed=seed)


@dataclass
class PressureCurve:
    t: np.ndarray
    P: np.ndarray
    stderr: np.ndarray
    per_n: np.ndarray
    n_grid: np.ndarray
    ess_min: float
    mean: float

    def rows(self):
        for t, p, s in zip(self.t, self.P, self.stderr):
            yield float(t), float(p), float(s)


def pressure_cgf(params, phi, t_grid, n_grid, samples, seed, burn_in=DEFAULT_BURN_IN):
    """``P(t phi)`` from ``(1/n) log mean exp(t S_n phi)``, extrapolated in ``1/n``."""
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    n_grid = np.unique(np.asarray(n_grid, dtype=np.int64))
    if n_grid.size < 1:
        raise ValidationError("n_grid must be nonempty")
    chunks = [s[:, 0, :] for _, s in birkhoff_sums(params, [phi], n_grid, samples,
                                                   seed, burn_in)]
    S = np.concatenate(chunks, axis=1)
    M = S.shape[1]
    per_n = np.empty((n_grid.size, t_grid.size))
    ess = np.inf
    for i, n in enumerate(n_grid):
        z = t_grid[:, None] * S[i][None, :]
        lse = logsumexp(z, axis=1)
        per_n[i] = (lse - math.log(M)) / n
        w = np.exp(z - lse[:, None])
        ess = min(ess, float(np.min(1.0 / np.sum(w * w, axis=1))))
    if ess < 100:
        warnings.warn(f"effective sample size {ess:.0f} < 100; tilted means are noisy",
                      RuntimeWarning, stacklevel=2)
    if n_grid.size >= 2:
        A = np.vstack([np.ones(n_grid.size), 1.0 / n_grid]).T
        coef, *_ = np.linalg.lstsq(A, per_n, rcond=None)
        P = coef[0]
        resid = per_n - A @ coef
        dof = max(n_grid.size - 2, 1)
        cov00 = np.linalg.inv(A.T @ A)[0, 0]
        stderr = np.sqrt(np.sum(resid ** 2, axis=0) / dof * cov00)
    else:
        P = per_n[0].copy()
        stderr = np.full(t_grid.size, np.nan)
    P[t_grid == 0.0] = 0.0
    stderr[t_grid == 0.0] = 0.0
    mean = float(S[-1].mean() / n_grid[-1])
    return PressureCurve(t=t_grid, P=P, stderr=stderr, per_n=per_n, n_grid=n_grid,
                         ess_min=ess, mean=mean)


def convex_repair(t, p):
    """Closest curve with nondecreasing slopes, anchored at the point nearest
    ``t = 0``.  Returns ``(repaired, max_abs_change)``."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if t.size < 3:
        return p.copy(), 0.0
    dt = np.diff(t)
    slope = np.diff(p) / dt
    fit = isotonic_regression(slope, weights=dt, increasing=True).x
    q = np.concatenate(([0.0], np.cumsum(fit * dt)))
    k = int(np.argmin(np.abs(t)))
    q += p[k] - q[k]
    return q, float(np.max(np.abs(q - p)))


@dataclass
class LegendreResult:
    s: np.ndarray
    I: np.ndarray
    argmax: np.ndarray
    endpoint: np.ndarray
    repair: float
    repaired: np.ndarray


def legendre_transform(t, p, s_grid=None, tol=1e-6, max_repair=1e-3):
    """``I(s) = max_t (t s - p(t))`` over the grid after convex repair.

    ``endpoint[i]`` flags values of ``s`` whose maximizer sits on the grid
    boundary, where the true supremum may be larger.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    order = np.argsort(t)
    t, p = t[order], p[order]
    q, rep = convex_repair(t, p)
    if rep > max_repair:
        raise NonConvexError(f"convex repair moved the curve by {rep:.3g} > {max_repair}")
    if s_grid is None:
        d = np.diff(q) / np.diff(t)
        s_grid = np.linspace(d[0], d[-1], t.size)
    s_grid = np.asarray(s_grid, dtype=float)
    vals = s_grid[:, None] * t[None, :] - q[None, :]
    k = np.argmax(vals, axis=1)
    I = vals[np.arange(s_grid.size), k]
    endpoint = (k == 0) | (k == t.size - 1)
    return LegendreResult(s=s_grid, I=I, argmax=t[k], endpoint=endpoint,
                          repair=rep if rep > tol else 0.0, repaired=q)


def concave_hull(x, y):
    """Upper concave hull of points, as sorted vertex arrays."""
    order = np.lexsort((-np.asarray(y), np.asarray(x)))
    pts = []
    for xi, yi in zip(np.asarray(x)[order], np.asarray(y)[order]):
        if pts and pts[-1][0] == xi:
            continue
        while len(pts) >= 2:
            (x1, y1), (x2, y2) = pts[-2], pts[-1]
            if (x2 - x1) * (yi - y1) - (y2 - y1) * (xi - x1) >= 0:
                pts.pop()
            else:
                break
        pts.append((xi, yi))
    hx = np.array([p[0] for p in pts])
    hy = np.array([p[1] for p in pts])
    return hx, hy


def _hull_on(t_grid, x, y):
    if len(x) == 0:
        return np.full(t_grid.size, np.nan)
    hx, hy = concave_hull(x, y)
    out = np.interp(t_grid, hx, hy)
    out[(t_grid < hx[0] - 1e-12) | (t_grid > hx[-1] + 1e-12)] = np.nan
    return out


@dataclass
class RateEnvelope:
    t: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    legendre: np.ndarray
    points: dict = field(default_factory=dict)

    def rows(self):
        for r in zip(self.t, self.upper, self.lower, self.legendre):
            yield tuple(float(v) for v in r)

    def max_over(self, lo, hi=np.inf, which="upper"):
        v = getattr(self, which)
        sel = (self.t >= lo - 1e-12) & (self.t <= hi) & np.isfinite(v)
        return float(v[sel].max()) if sel.any() else float("nan")


DEFAULT_HORSESHOES = ((1, None),)


def variational_envelope(params, phi, t_grid, horseshoes=DEFAULT_HORSESHOES, k=10,
                         period_max=10, s_grid=None, legendre=None, strict=True):
    """Free-energy envelope ``F_phi(t)`` from below and above.

    Each horseshoe ``(m, window)`` gives tilted equilibria with
    ``t = t_g(s) / m`` and free-energy proxy ``(p(s) - s t_g(s)) / m``; their
    concave hull is ``upper``.  Periodic orbits of ``f`` give ``(nu(phi),
    -lambda(nu))`` and their concave hull is ``lower``.  ``legendre`` may
    carry a ``LegendreResult`` whose ``-I`` is interpolated as a third column.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if s_grid is None:
        s_grid = np.linspace(-12.0, 12.0, 241)
    ux, uy = [], []
    for m, window in horseshoes:
        hs = thermo.find_horseshoe(params, m, window)
        tree = thermo.cylinders(hs, k)
        pc = thermo.pressure_curve(tree, phi, s_grid)
        ux.extend(pc[:, 2] / m)
        uy.extend((pc[:, 1] - pc[:, 0] * pc[:, 2]) / m)
    lx, ly = [], []
    for nu in thermo.periodic_orbit_survey(params, period_max, {"phi": phi}):
        lx.append(nu.observable_means["phi"])
        ly.append(nu.free_energy)
    upper = _hull_on(t_grid, np.array(ux), np.array(uy))
    lower = _hull_on(t_grid, np.array(lx), np.array(ly))
    if legendre is not None:
        leg = -np.interp(t_grid, legendre.s, legendre.I, left=np.nan, right=np.nan)
    else:
        leg = np.full(t_grid.size, np.nan)
    env = RateEnvelope(t=t_grid, upper=upper, lower=lower, legendre=leg,
                       points={"upper": (np.array(ux), np.array(uy)),
                               "lower": (np.array(lx), np.array(ly))})
    missing = t_grid[np.isnan(upper)]
    if strict and missing.size:
        raise CoverageError(f"{missing.size} grid points reached by no horseshoe measure",
                            missing=missing.tolist())
    return env


@dataclass
class Crosscheck:
    b: float
    empirical: tuple
    variational: tuple
    legendre: tuple
    tol: float
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"b": self.b, "empirical": list(self.empirical),
                "variational": list(self.variational), "legendre": list(self.legendre),
                "tol": self.tol, "pass": self.passed, **self.details}


DEFAULT_BUDGETS = {"samples": 10 ** 6, "n_grid": [20, 40, 60, 80, 100, 120, 140, 160, 180, 200],
                   "cgf_samples": 2 * 10 ** 5, "cgf_n_grid": [10, 20, 40, 80],
                   "t_grid": [-0.5, 0.5, 101], "k": 14, "period_max": 10,
                   "horseshoes": [[1, None]], "seed": 12345, "floor": 0.05}


def ldp_crosscheck(params, phi, b, budgets=None):
    """Compare the Monte Carlo rate, the variational maximum over ``t >= b``
    and the Legendre rate at ``b``."""
    bud = dict(DEFAULT_BUDGETS)
    bud.update(budgets or {})
    seed = int(bud["seed"])
    n_grid = np.asarray(bud["n_grid"], dtype=np.int64)
    if n_grid.size < 3:
        raise InconclusiveError("n_grid too short for a rate fit (need at least 3 values)")
    rs = deviation_rate(params, [phi], [b], n_grid, int(bud["samples"]), seed)
    if (~rs.censored).sum() < 3:
        raise InconclusiveError("fewer than 3 uncensored cells")
    emp = (rs.fit[0], rs.fit[2])
    lo, hi, cnt = bud["t_grid"]
    tg = np.linspace(lo, hi, int(cnt))
    pc = pressure_cgf(params, phi, tg, bud["cgf_n_grid"], int(bud["cgf_samples"]), seed + 1)
    leg = legendre_transform(pc.t, pc.P)
    I_b = float(np.interp(b, leg.s, leg.I))
    k = int(np.argmin(np.abs(leg.s - b)))
    se_leg = float(np.interp(leg.argmax[k], pc.t, pc.stderr))
    legv = (-I_b if b > pc.mean else 0.0, se_leg)
    env_t = np.linspace(min(0.0, b), max(0.6, b + 0.3), 121)
    env = variational_envelope(params, phi, env_t,
                               horseshoes=[tuple(h) for h in bud["horseshoes"]],
                               k=int(bud["k"]), period_max=int(bud["period_max"]),
                               legendre=leg, strict=False)
    var = env.max_over(b)
    spread = abs(var - env.max_over(b, which="lower")) if np.isfinite(
        env.max_over(b, which="lower")) else float("nan")
    if not np.isfinite(var):
        raise CoverageError("no horseshoe measure reaches t >= b", missing=[b])
    varv = (var, 0.0)
    tol = max(float(bud["floor"]), 2.0 * math.hypot(emp[1], legv[1]))
    passed = abs(emp[0] - var) <= tol and abs(legv[0] - var) <= tol
    return Crosscheck(b=b, empirical=emp, variational=varv, legendre=legv, tol=tol,
                      passed=passed,
                      details={"periodic_lower": env.max_over(b, which="lower"),
                               "upper_lower_gap": spread,
                               "legendre_repair": leg.repair,
                               "cgf_ess_min": pc.ess_min,
                               "uncensored_cells": int((~rs.censored).sum())})
