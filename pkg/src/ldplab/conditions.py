"""Finite-depth checks of the hypotheses on the parameter ``a``.

Every report is a statement "to depth n" about computed quantities.  The
critical orbit is recomputed here rather than taken from
``critical_table`` so that an orbit landing exactly on 0 produces a
``-inf`` margin instead of an error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .mapcore import MapParams


@dataclass
class ConditionReport:
    condition: str
    depth_checked: int
    passed: bool
    worst_margin: float
    worst_n: int
    margin_series: np.ndarray = None
    note: str = ""

    def as_dict(self, series=False):
        d = {"condition": self.condition, "depth_checked": self.depth_checked,
             "pass": self.passed, "worst_margin": _jsonable(self.worst_margin),
             "worst_n": self.worst_n}
        if self.note:
            d["note"] = self.note
        if series and self.margin_series is not None:
            d["margin_series"] = [_jsonable(v) for v in self.margin_series]
        return d


def _jsonable(v):
    v = float(v)
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return v


def critical_orbit(a, depth):
    """``(c, logD)``: ``c[n] = f^n(c_0)`` and ``logD[n] = log|Df^n(c_0)|``
    for ``0 <= n <= depth``, with ``c_0 = f(0) = 1``."""
    c = np.empty(depth + 1)
    logD = np.zeros(depth + 1)
    c[0] = 1.0
    with np.errstate(divide="ignore"):
        for n in range(depth):
            logD[n + 1] = logD[n] + math.log(2.0 * a * abs(c[n])) if c[n] != 0 else -np.inf
            c[n + 1] = 1.0 - a * c[n] * c[n]
    return c, logD


def _report(name, depth, margins, start):
    if depth == 0 or margins.size == 0:
        return ConditionReport(name, depth, True, float("inf"), 0,
                               margin_series=np.empty(0), note="no data")
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return ConditionReport(name, depth, worst >= 0.0, worst, k + start,
                           margin_series=margins)


def check_A2(params):
    """Margins ``(1/n) log|Df^n(c_0)| - lambda`` for ``1 <= n <= depth``."""
    _, logD = critical_orbit(params.a, params.depth)
    n = np.arange(1, params.depth + 1)
    return _report("A2", params.depth, logD[1:] / n - params.lam, 1)


def check_A3(params):
    """Margins ``log|f^n 0| + alpha sqrt(n)``; note ``f^n 0 = c_{n-1}``."""
    c, _ = critical_orbit(params.a, params.depth)
    n = np.arange(1, params.depth + 1)
    with np.errstate(divide="ignore"):
        m = np.log(np.abs(c[:-1])) + params.alpha * np.sqrt(n)
    return _report("A3", params.depth, m, 1)


def image_interval(a, lo, hi):
    """Exact image of ``[lo, hi]`` under ``f``: split at 0, push the laps."""
    fl, fr = 1.0 - a * lo * lo, 1.0 - a * hi * hi
    top = 1.0 if lo <= 0.0 <= hi else max(fl, fr)
    return min(fl, fr), top


def covering_time(a, lo, hi, m_max):
    """Smallest ``m <= m_max`` with ``f^m[lo, hi]`` containing the core
    ``[1 - a, 1]``, or ``None``."""
    k_lo, k_hi = 1.0 - a, 1.0
    for m in range(m_max + 1):
        if lo <= k_lo and hi >= k_hi:
            return m
        lo, hi = image_interval(a, lo, hi)
    return None


def check_A4(params, m_max=64, probe_width=None):
    """Covering certificate for mixing on the core at one probe scale.

    The core is tiled by probes of width ``probe_width`` (the last one
    aligned to the right end); margin is ``m_max`` minus the largest
    covering time, ``-1`` if some probe never covers.
    """
    a = params.a
    k_lo, k_hi = 1.0 - a, 1.0
    core = k_hi - k_lo
    if probe_width is None:
        probe_width = core / 20.0
    if m_max < 1:
        raise ValidationError("m_max must be at least 1")
    if not 0.0 < probe_width <= core:
        raise ValidationError("probe width must lie in (0, |core|]")
    count = int(math.ceil(core / probe_width - 1e-12))
    starts = k_lo + probe_width * np.arange(count)
    starts[-1] = k_hi - probe_width
    times = []
    for s in starts:
        t = covering_time(a, float(s), float(s + probe_width), m_max)
        times.append(m_max + 1 if t is None else t)
    times = np.array(times)
    k = int(times.argmax())
    worst = float(m_max - times[k])
    return ConditionReport("A4", m_max, worst >= 0.0, worst, int(times[k]),
                           margin_series=m_max - times,
                           note=f"probe_width={probe_width:.6g}, probes={count}")


@dataclass
class ScanResult:
    rows: list
    survivors: list

    @property
    def fraction(self):
        return len(self.survivors) / len(self.rows) if self.rows else 0.0


def scan_parameters(a_lo, a_hi, grid_step, params_template=None, out=None):
    """Check A2 and A3 on a grid of ``a`` values.

    With ``out`` given, one JSON record per parameter is appended as it is
    computed; parameters already present in the file are not recomputed.
    """
    if grid_step <= 0:
        raise ValidationError("grid_step must be positive")
    if a_hi > 2.0 or a_lo > a_hi:
        raise ValidationError("need a_lo <= a_hi <= 2")
    tmpl = params_template or MapParams()
    if a_lo == a_hi:
        return ScanResult([], [])
    count = int(math.floor((a_hi - a_lo) / grid_step + 1e-9)) + 1
    grid = [round(a_lo + k * grid_step, 12) for k in range(count)]
    done = {}
    fh = None
    if out is not None:
        path = Path(out)
        if path.exists():
            for line in path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    done[rec["a"]] = rec
        fh = path.open("a")
    rows = []
    try:
        for a in grid:
            if a in done:
                rows.append(done[a])
                continue
            p = replace(tmpl, a=a)
            r2, r3 = check_A2(p), check_A3(p)
            rec = {"a": a, "A2": r2.as_dict(), "A3": r3.as_dict(),
                   "pass": bool(r2.passed and r3.passed)}
            rows.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    return ScanResult(rows, [r["a"] for r in rows if r["pass"]])
