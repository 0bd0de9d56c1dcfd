import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldplab.conditions import (
    check_A2, check_A3, check_A4, covering_time, critical_orbit,
    image_interval, scan_parameters,
)
from ldplab.errors import ValidationError
from ldplab.mapcore import MapParams

PERIOD3 = 1.7548777


def test_A2_at_two_closed_form():
    r = check_A2(MapParams(depth=1000))
    assert r.passed and r.depth_checked == 1000
    assert r.worst_margin == pytest.approx(1.1 * math.log(2), abs=1e-12)
    assert np.allclose(r.margin_series, 1.1 * math.log(2), atol=1e-12)


def test_A2_fails_in_period_three_window():
    r = check_A2(MapParams(a=PERIOD3, capN=11, depth=200))
    assert not r.passed and r.worst_margin < 0


def test_A3_at_two_closed_form():
    p = MapParams(depth=10000)
    r = check_A3(p)
    assert r.passed and r.worst_n == 1
    assert r.worst_margin == pytest.approx(p.alpha, abs=1e-12)
    n = np.arange(1, 10001)
    assert np.allclose(r.margin_series, p.alpha * np.sqrt(n), atol=1e-12)


def test_A3_minus_infinity_when_orbit_hits_zero():
    # a = 1 gives 0 -> 1 -> 0, so f^2(0) = 0
    c, _ = critical_orbit(1.0, 4)
    assert c[1] == 0.0
    r = check_A3(MapParams(a=1.0, capN=11, depth=20))
    assert not r.passed and r.worst_margin == -math.inf


def test_A3_report_at_1_99():
    r = check_A3(MapParams(a=1.99, capN=11, depth=500))
    assert r.depth_checked == 500 and r.margin_series.size == 500
    assert r.passed == (r.worst_margin >= 0)


def test_reports_json_fields():
    d = check_A2(MapParams(depth=30)).as_dict(series=True)
    assert set(d) >= {"condition", "depth_checked", "pass", "worst_margin",
                      "worst_n", "margin_series"}
    json.dumps(d)


def test_A4_examples():
    p = MapParams()
    assert covering_time(2.0, 0.4, 0.5, 64) is not None
    r = check_A4(p, m_max=64, probe_width=2.0)
    assert r.passed and r.worst_n == 0
    assert not check_A4(MapParams(a=PERIOD3, capN=11, depth=40), m_max=64).passed


def test_A4_validation():
    with pytest.raises(ValidationError):
        check_A4(MapParams(), m_max=0)
    with pytest.raises(ValidationError):
        check_A4(MapParams(), probe_width=3.0)


def test_image_interval_folds():
    assert image_interval(2.0, -0.5, 0.5) == (0.5, 1.0)
    assert image_interval(2.0, 0.5, 1.0) == (-1.0, 0.5)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.01, 1.0), lo=st.floats(-1.0, 0.0))
def test_A4_covering_antitone_in_width(w, lo):
    hi_small = min(lo + w / 2, 1.0)
    hi_big = min(lo + w, 1.0)
    t_small = covering_time(2.0, lo, hi_small, 200)
    t_big = covering_time(2.0, lo, hi_big, 200)
    if t_small is not None:
        assert t_big is not None and t_big <= t_small


@settings(max_examples=15, deadline=None)
@given(a=st.floats(1.7, 2.0), n0=st.integers(11, 60))
def test_monotone_truncation(a, n0):
    short = check_A2(MapParams(a=a, capN=11, depth=n0))
    long = check_A2(MapParams(a=a, capN=11, depth=n0 + 40))
    if not short.passed:
        assert not long.passed
    s3 = check_A3(MapParams(a=a, capN=11, depth=n0))
    l3 = check_A3(MapParams(a=a, capN=11, depth=n0 + 40))
    if not s3.passed:
        assert not l3.passed
    assert np.array_equal(long.margin_series[:n0], short.margin_series)


def test_scan_two_survives(tmp_path):
    res = scan_parameters(1.99, 2.0, 1e-4, MapParams(capN=11, depth=50))
    assert len(res.rows) == 101
    assert 2.0 in res.survivors
    assert 0 < res.fraction <= 1


def test_scan_empty_and_validation():
    assert scan_parameters(1.9, 1.9, 1e-3).rows == []
    with pytest.raises(ValidationError):
        scan_parameters(1.9, 2.1, 1e-3)
    with pytest.raises(ValidationError):
        scan_parameters(1.9, 2.0, 0.0)


def test_scan_excludes_period_three_core():
    res = scan_parameters(1.75, 1.76, 1e-3, MapParams(capN=11, depth=200))
    assert 1.755 not in res.survivors


def test_scan_resume(tmp_path):
    out = tmp_path / "scan.jsonl"
    tmpl = MapParams(capN=11, depth=50)
    first = scan_parameters(1.995, 2.0, 1e-3, tmpl, out=out)
    lines = out.read_text().splitlines()
    assert len(lines) == len(first.rows)
    # truncate and resume: only missing rows are appended
    out.write_text("\n".join(lines[:3]) + "\n")
    again = scan_parameters(1.995, 2.0, 1e-3, tmpl, out=out)
    assert [r["a"] for r in again.rows] == [r["a"] for r in first.rows]
    assert again.survivors == first.survivors
    assert len(out.read_text().splitlines()) == len(first.rows)
