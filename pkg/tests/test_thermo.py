import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldplab.errors import BudgetExceededError, NotFoundError, ValidationError
from ldplab.mapcore import MapParams
from ldplab.thermo import (
    LinearHorseshoe, cylinders, equilibrium_nu_k, find_horseshoe,
    fixed_points_fp, periodic_orbit_survey, pressure_curve, spread_measure,
)

P2 = MapParams()
# windows whose branches sit in the interior, so g is uniformly expanding
INTERIOR = [(2, (-0.95, 0.95)), (2, (-0.8, 0.8)), (3, (-0.9, 0.9))]


def _necklaces(p):
    # number of primitive binary necklaces of length p (Moebius inversion)
    def mu(n):
        res, d = 1, 2
        while d * d <= n:
            if n % d == 0:
                n //= d
                if n % d == 0:
                    return 0
                res = -res
            d += 1
        return -res if n > 1 else res
    return sum(mu(d) * 2 ** (p // d) for d in range(1, p + 1) if p % d == 0) // p


def test_horseshoe_examples_at_two():
    assert find_horseshoe(P2, 1, (-1.0, 1.0)).q == 2
    assert find_horseshoe(P2, 2, (-1.0, 1.0)).q == 4
    with pytest.raises(NotFoundError):
        find_horseshoe(P2, 2, (-1.0, 1.0), q_min=5)
    with pytest.raises(ValidationError):
        find_horseshoe(P2, 0)
    with pytest.raises(ValidationError):
        find_horseshoe(P2, 1, (-1.5, 1.0))


@pytest.mark.parametrize("m,window", INTERIOR)
def test_horseshoe_invariants(m, window):
    h = find_horseshoe(P2, m, window)
    L = h.intervals
    assert np.all(L[1:, 0] > L[:-1, 1])
    assert h.interior
    assert h.expansion()[1] > 1.0
    for i, (lo, hi) in enumerate(L):
        y, _ = h.forward(np.array([lo, hi]))
        assert sorted(y) == pytest.approx(list(window), abs=1e-12)
        u = np.linspace(lo, hi, 257)
        assert np.all(np.diff(h.forward(u)[0]) > 0) or np.all(np.diff(h.forward(u)[0]) < 0)


def test_linear_cylinder_lengths():
    t = cylinders(LinearHorseshoe((2, 2)), 5)
    assert np.allclose(t.lengths, 2.0 ** -6, rtol=1e-14)
    t = cylinders(LinearHorseshoe((2, 4)), 1)
    assert t.lengths[1] == pytest.approx(1 / 8, rel=1e-14)  # word (0, 1)


def test_period_one_point_is_branch_fixed_point():
    h = LinearHorseshoe((2, 4))
    t = cylinders(h, 0)
    assert t.periodic[0] == pytest.approx(h.inverse(0, t.periodic[0]), abs=1e-12)
    assert t.periodic[0] == pytest.approx(0.0, abs=1e-12)


def test_cylinder_budget():
    with pytest.raises(BudgetExceededError):
        cylinders(LinearHorseshoe((2, 2)), 5, budget=10)


@pytest.mark.parametrize("h", [LinearHorseshoe((2, 2)),
                               find_horseshoe(P2, 1, (-1.0, 1.0)),
                               find_horseshoe(P2, 2, (-1.0, 1.0))])
def test_children_partition_full_parents(h):
    t = cylinders(h, 6)
    assert t.child_sum_error() <= 1e-10


@pytest.mark.parametrize("m,window", INTERIOR)
def test_children_refine_parents(m, window):
    t = cylinders(find_horseshoe(P2, m, window), 5)
    for par, ch in zip(t.levels, t.levels[1:]):
        ch = ch.reshape(-1, t.q, 2)
        assert np.all(ch[:, :, 0] >= par[:, None, 0] - 1e-15)
        assert np.all(ch[:, :, 1] <= par[:, None, 1] + 1e-15)
    assert t.ratio_bound() > 0.0


@pytest.mark.parametrize("m,window", INTERIOR)
def test_periodic_points_forward(m, window):
    h = find_horseshoe(P2, m, window)
    t = cylinders(h, 6)
    L = t.levels[-1]
    assert np.all((t.periodic >= L[:, 0] - 1e-12) & (t.periodic <= L[:, 1] + 1e-12))
    x = t.periodic.copy()
    for _ in range(t.k + 1):
        x, _ = h.forward(x)
    assert np.max(np.abs(x - t.periodic)) <= 1e-9


def test_linear_toy_proxies():
    nu, proxy = equilibrium_nu_k(cylinders(LinearHorseshoe((2, 2)), 10))
    assert proxy == pytest.approx(0.0, abs=1e-12)
    assert nu.weights.sum() == pytest.approx(1.0)
    nu, proxy = equilibrium_nu_k(cylinders(LinearHorseshoe((2, 4)), 10))
    gibbs = np.array([2 / 3, 1 / 3])
    sup = -(gibbs @ np.log(gibbs)) - gibbs @ np.log([2.0, 4.0])
    assert sup == pytest.approx(math.log(0.75), abs=1e-12)
    assert abs(proxy - sup) <= 0.02 and proxy <= sup + 0.02
    assert nu.lyapunov == pytest.approx(gibbs @ np.log([2.0, 4.0]), abs=1e-9)


def test_pressure_tilt_closed_form():
    h = LinearHorseshoe((2, 4))
    t = cylinders(h, 8)
    phi = lambda x: (np.asarray(x) < h.intervals[0, 1]).astype(float)
    s = np.linspace(-2, 2, 21)
    c = pressure_curve(t, phi, s)
    expect = np.log(np.exp(s) / 2 + 0.25)
    assert np.allclose(c[:, 1], expect, atol=1e-12)
    slope = (np.exp(s) / 2) / (np.exp(s) / 2 + 0.25)
    assert np.allclose(c[:, 2], slope, atol=1e-12)
    _, proxy = equilibrium_nu_k(t)
    assert pressure_curve(t, phi, [0.0])[0, 1] == pytest.approx(proxy, abs=1e-14)


def test_pressure_constant_potential():
    t = cylinders(LinearHorseshoe((2, 4)), 6)
    c = pressure_curve(t, lambda x: np.full(np.shape(x), 0.7), [-1.0, 0.0, 2.0])
    assert np.allclose(c[:, 2], 0.7)
    assert np.allclose(c[:, 1] - c[1, 1], 0.7 * c[:, 0])


@settings(max_examples=20, deadline=None)
@given(m=st.sampled_from([1, 2]), scale=st.floats(0.3, 3.0))
def test_pressure_convex_and_slope_monotone(m, scale):
    h = find_horseshoe(P2, m, (-1.0, 1.0))
    t = cylinders(h, 6)
    c = pressure_curve(t, lambda x: scale * np.asarray(x) ** 2, np.linspace(-3, 3, 41))
    assert np.all(np.diff(c[:, 1], 2) >= -1e-9)
    assert np.all(np.diff(c[:, 2]) >= -1e-12)


@pytest.mark.parametrize("m,window", INTERIOR + [(1, (-1.0, 1.0)), (2, (-1.0, 1.0))])
def test_ruelle_on_spreads(m, window):
    h = find_horseshoe(P2, m, window)
    nu, _ = equilibrium_nu_k(cylinders(h, 5), {"x": lambda x: x})
    sig = spread_measure(h, nu)
    assert sig.free_energy <= 1e-6
    assert sig.lyapunov == pytest.approx(nu.lyapunov / m)
    assert sig.observable_means["x"] == pytest.approx(nu.observable_means["x"] / m)
    assert sig.entropy_lb <= math.log(h.q) / m + 1e-6


def test_spread_identity_at_m1():
    h = LinearHorseshoe((2, 4))
    nu, _ = equilibrium_nu_k(cylinders(h, 8))
    sig = spread_measure(h, nu)
    assert sig.lyapunov == nu.lyapunov and sig.entropy_lb == nu.entropy_lb
    assert sig.free_energy == pytest.approx(math.log(0.75), abs=0.02)


def test_survey_fixed_points_at_two():
    s = periodic_orbit_survey(P2, 1)
    pts = sorted(float(m.support[0]) for m in s)
    assert pts == pytest.approx([-1.0, 0.5], abs=1e-12)
    half = [m for m in s if abs(m.support[0] - 0.5) < 1e-9][0]
    assert half.lyapunov == pytest.approx(math.log(2), abs=1e-12)
    assert half.free_energy == -half.lyapunov and half.entropy_lb == 0.0


@pytest.mark.parametrize("p", range(1, 13))
def test_fixed_point_counts_at_two(p):
    assert fixed_points_fp(2.0, p).size == 2 ** p


def test_survey_orbit_counts_and_weights():
    s = periodic_orbit_survey(P2, 12)
    for p in range(1, 13):
        orbits = [m for m in s if m.period == p]
        assert len(orbits) == _necklaces(p)
        for m in orbits:
            assert np.allclose(m.weights, 1.0 / p)
    with pytest.raises(ValidationError):
        periodic_orbit_survey(P2, 25)
