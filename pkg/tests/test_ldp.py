import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldplab.errors import CensoredError, InconclusiveError, NonConvexError, ValidationError
from ldplab.ldp import (
    Observable, birkhoff_mean, concave_hull, convex_repair, deviation_rate,
    ldp_crosscheck, legendre_transform, observable, pressure_cgf, sample_mu,
    variational_envelope,
)
from ldplab.mapcore import MapParams

P2 = MapParams()
X = observable("x")


def test_sample_mu_examples():
    pts = sample_mu(P2, 10 ** 6, seed=0)
    assert pts.size == 10 ** 6
    mass = np.mean(np.abs(pts) <= 0.5)
    assert mass == pytest.approx(1 / 3, abs=0.01)
    assert abs(pts.mean()) <= 0.005
    assert sample_mu(P2, 0).size == 0


def test_sample_mu_deterministic():
    assert np.array_equal(sample_mu(P2, 5000, seed=3), sample_mu(P2, 5000, seed=3))


def test_birkhoff_mean_matches_arcsine_second_moment():
    # int x^2 dmu = 1/2 for the arcsine law
    assert birkhoff_mean(P2, observable("x2"), 10 ** 6, seed=1) == pytest.approx(0.5, abs=0.005)


def test_observables():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (2, 1000))
    for name in ("x", "x2", "const"):
        o = observable(name)
        assert np.all(np.abs(o.eval(x) - o.eval(y)) <= o.lipschitz * np.abs(x - y) + 1e-15)
    assert observable("logdf").singular
    with pytest.raises(ValidationError):
        observable("nope")


def test_rate_trivial_threshold():
    rs = deviation_rate(P2, [X], [-1.0], [10, 20, 40], 2000, seed=0)
    assert np.all(rs.values == 0.0)
    assert rs.fit[0] == pytest.approx(0.0, abs=1e-12)


def test_rate_impossible_threshold_censored():
    with pytest.raises(CensoredError):
        deviation_rate(P2, [X], [1.01], [10, 20], 1000, seed=0)
    assert issubclass(CensoredError, InconclusiveError)


def test_rate_series_shape_and_sign():
    rs = deviation_rate(P2, [X], [0.1], [20, 40, 60, 80, 100], 20000, seed=2)
    assert np.all(rs.values <= 0)
    assert rs.fit[0] <= rs.fit[2]
    assert np.all(rs.ci_lo <= rs.values + 1e-15) and np.all(rs.values <= rs.ci_hi + 1e-15)
    rows = list(rs.rows())
    assert len(rows) == 5 and rows[0][0] == 20


def test_rate_censoring_is_upper_bound():
    rs = deviation_rate(P2, [X], [0.4], [2, 200], 2000, seed=0)
    assert rs.censored[-1] and not rs.censored[0]
    M = rs.samples
    assert rs.values[-1] == pytest.approx(math.log(1 - 0.05 ** (1 / M)) / 200)


def test_rate_joint_thresholds():
    rs = deviation_rate(P2, [X, observable("x2")], [0.0, 0.4], [10, 20, 30], 5000, seed=4)
    single = deviation_rate(P2, [X], [0.0], [10, 20, 30], 5000, seed=4)
    assert np.all(rs.hits <= single.hits)


@settings(max_examples=8, deadline=None)
@given(b1=st.floats(-0.2, 0.3), gap=st.floats(0.01, 0.2))
def test_rate_monotone_in_threshold(b1, gap):
    n = [10, 30]
    lo = deviation_rate(P2, [X], [b1], n, 3000, seed=9)
    hi = deviation_rate(P2, [X], [b1 + gap], n, 3000, seed=9)
    assert np.all(hi.hits <= lo.hits)


def test_pressure_zero_and_jensen():
    t = np.linspace(-0.5, 0.5, 21)
    pc = pressure_cgf(P2, X, t, [10, 20, 40], 100000, seed=0)
    assert pc.P[t == 0.0][0] == 0.0
    assert np.all(pc.P >= t * pc.mean - pc.stderr - 1e-12)
    q, rep = convex_repair(pc.t, pc.P)
    assert rep <= 1e-3


def test_pressure_constant_observable():
    c = Observable("c", lambda x: np.full(np.shape(x), 0.3), 0.0)
    t = np.linspace(-2, 2, 9)
    pc = pressure_cgf(P2, c, t, [5, 10], 500, seed=0)
    assert np.allclose(pc.P, 0.3 * t, atol=1e-12)


def test_pressure_ess_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        pressure_cgf(P2, X, [0.0, 20.0], [50], 200, seed=0)
    assert any("effective sample size" in str(x.message) for x in w)


def test_legendre_quadratic():
    t = np.linspace(-3, 3, 6001)
    leg = legendre_transform(t, t ** 2 / 2, s_grid=np.linspace(-2, 2, 81))
    assert np.allclose(leg.I, leg.s ** 2 / 2, atol=1e-4)
    assert not leg.endpoint.any() and leg.repair == 0.0


def test_legendre_linear_is_point_mass():
    t = np.linspace(-1, 1, 41)
    leg = legendre_transform(t, 0.4 * t, s_grid=np.array([0.0, 0.4, 1.0]))
    assert leg.I[1] == pytest.approx(0.0, abs=1e-12)
    assert leg.endpoint[0] and leg.endpoint[2]


def test_legendre_rejects_nonconvex():
    t = np.linspace(-1, 1, 41)
    with pytest.raises(NonConvexError):
        legendre_transform(t, -t ** 2)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 3.0), b=st.floats(-1.0, 1.0), c=st.floats(0.0, 2.0))
def test_legendre_biconjugate(a, b, c):
    t = np.linspace(-2, 2, 401)
    p = a * t ** 2 + b * t + c * np.abs(t) ** 3
    leg = legendre_transform(t, p)
    back = np.max(t[:, None] * leg.s[None, :] - leg.I[None, :], axis=1)
    inner = slice(20, -20)
    slope_step = np.max(np.diff(leg.s))
    assert np.max(np.abs(back[inner] - p[inner])) <= slope_step * 0.05 + 1e-9


def test_convex_repair_identity_on_convex():
    t = np.linspace(-1, 1, 51)
    q, rep = convex_repair(t, np.exp(t))
    assert rep <= 1e-12


def test_concave_hull():
    hx, hy = concave_hull([0, 1, 2, 1], [0, 1, 0, -5])
    assert hx.tolist() == [0, 1, 2] and hy.tolist() == [0, 1, 0]


def test_envelope_properties():
    t = np.linspace(-0.9, 0.45, 136)
    env = variational_envelope(P2, X, t, k=10, period_max=10)
    assert np.all(env.upper <= 1e-6)
    fin = np.isfinite(env.lower)
    assert np.all(env.lower[fin] <= env.upper[fin] + 1e-6)
    assert np.all(np.diff(env.upper, 2) <= 1e-9)
    # untilted equilibrium sits at the top of the envelope
    assert env.upper.max() == pytest.approx(0.0, abs=1e-3)


def test_envelope_coverage_error():
    from ldplab.errors import CoverageError
    with pytest.raises(CoverageError) as ei:
        variational_envelope(P2, X, np.array([0.0, 0.99]), k=6, period_max=4)
    assert 0.99 in ei.value.missing


def test_crosscheck_trivial_threshold():
    cc = ldp_crosscheck(P2, X, -1.0, {"samples": 5000, "cgf_samples": 5000,
                                      "k": 8, "period_max": 6})
    assert cc.empirical[0] == pytest.approx(0.0, abs=1e-9)
    assert cc.legendre[0] == 0.0
    assert cc.variational[0] == pytest.approx(0.0, abs=1e-3)
    assert cc.passed


def test_crosscheck_inconclusive_paths():
    with pytest.raises(InconclusiveError):
        ldp_crosscheck(P2, X, 0.1, {"n_grid": [20, 40]})
    with pytest.raises(InconclusiveError):
        ldp_crosscheck(P2, X, 0.9, {"samples": 2000, "n_grid": [50, 100, 150]})
