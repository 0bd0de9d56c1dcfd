"""Command line front end.

Every subcommand reads one JSON config (optional), applies dotted
overrides such as ``--params.epsilon 0.02`` or the shorthands ``--a`` and
``--depth``, and writes its artifacts plus a manifest into ``--out``.
CSV files start with a ``# manifest_hash=...`` comment line.  Nothing
time-dependent is written, so identical manifests give identical files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ComputationError, InconclusiveError, ValidationError

COMMANDS = ("check", "table", "partition", "induce", "tower", "horseshoe",
            "equilibrium", "pressure", "rate", "envelope", "crosscheck",
            "verify-lemmas")

DEFAULT_CONFIG = {
    "params": {"a": 2.0, "lambda": None, "alpha": None, "epsilon": None,
               "capN": None, "depth": 60},
    "budgets": {
        "seed": 0,
        "samples": 1000,
        "n_grid": [20, 40, 60, 80, 100, 120, 140, 160, 180, 200],
        "rate_samples": 10 ** 6,
        "cgf_samples": 2 * 10 ** 5,
        "cgf_n_grid": [10, 20, 40, 80],
        "t_grid": [-0.5, 0.5, 101],
        "s_grid": [-12.0, 12.0, 241],
        "k": 10,
        "m": 1,
        "window": None,
        "period_max": 10,
        "observable": "x",
        "b": 0.1,
        "p_max": None,
        "partition_depth": 16,
        "track_depth": 20000,
        "generations": 1,
        "lemma_samples": 1000,
        "a4_m_max": 64,
        "a4_probe_width": None,
        "floor": 0.05,
        "envelope_t_grid": [-0.9, 0.45, 136],
    },
    "outputs": {"directory": "ldplab-out", "formats": ["json", "csv"]},
}

SHORTHANDS = {"a": "params.a", "depth": "params.depth", "epsilon": "params.epsilon",
              "capN": "params.capN", "lambda": "params.lambda", "alpha": "params.alpha",
              "samples": "budgets.samples", "k": "budgets.k", "m": "budgets.m",
              "b": "budgets.b"}


def _merge(base, upd, path=""):
    out = dict(base)
    for key, val in upd.items():
        if key not in base:
            raise ValidationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ValidationError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ValidationError(f"unknown config key {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ValidationError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def load_config(path=None, overrides=()):
    """Resolve defaults, a config file (or a manifest) and overrides."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if "config" in doc and "config_hash" in doc:
            doc = doc["config"]
        cfg = _merge(cfg, doc)
    for dotted, value in overrides:
        _set_dotted(cfg, dotted, value)
    return cfg


def make_params(cfg):
    from .mapcore import MapParams
    p = {k: v for k, v in cfg["params"].items() if v is not None}
    kw = {}
    for key, name in (("a", "a"), ("lambda", "lam"), ("alpha", "alpha"),
                      ("epsilon", "epsilon"), ("capN", "capN"), ("depth", "depth")):
        if key in p:
            kw[name] = p[key]
    try:
        return MapParams(**kw)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


class Writer:
    """Writes artifacts tagged with the manifest hash."""

    def __init__(self, out, command, cfg):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        # the output location does not affect results, so it stays out of the hash
        hashed = {k: v for k, v in cfg.items() if k != "outputs"}
        canon = json.dumps({"command": command, "config": hashed}, sort_keys=True,
                           separators=(",", ":"))
        self.hash = hashlib.sha256(canon.encode()).hexdigest()
        self.files = []

    def json(self, name, obj):
        path = self.out / name
        doc = {"manifest_hash": self.hash, **_clean(obj)}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.files.append(name)

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# manifest_hash={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        (self.out / name).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
        self.files.append(name)

    def manifest(self, status, seed):
        doc = {"command": self.command, "config": self.cfg, "config_hash": self.hash,
               "seed": seed, "version": f"ldplab {__version__}", "status": status,
               "files": sorted(set(self.files))}
        (self.out / f"{self.command}.manifest.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _linspace(triple):
    lo, hi, n = triple
    return np.linspace(float(lo), float(hi), int(n))


# ---------------------------------------------------------------------------
# subcommands

def cmd_check(params, bud, w):
    from .conditions import check_A2, check_A3, check_A4
    reps = [check_A2(params), check_A3(params),
            check_A4(params, bud["a4_m_max"], bud["a4_probe_width"])]
    w.json("check.json", {"params": params.as_dict(),
                          "overridden": params.overridden,
                          "reports": [r.as_dict() for r in reps]})
    for r in reps:
        print(f"{r.condition}: {'pass' if r.passed else 'FAIL'} "
              f"worst_margin={r.worst_margin:.6g} at n={r.worst_n}")


def cmd_table(params, bud, w):
    from .mapcore import critical_table
    t = critical_table(params)
    rows = ((n, t.c[n], t.logD[n], t.d[n], t.D[n], t.delta[n]) for n in range(t.depth + 1))
    w.csv("table.csv", ["n", "c", "logD", "d", "D", "delta"], rows)
    w.json("table.json", {"params": params.as_dict(), "deltaHat": t.deltaHat,
                          "deltaN": t.deltaN})
    print(f"deltaHat={t.deltaHat:.6g} delta={t.deltaN:.6g} capN={params.capN}")


def _engine(params, bud):
    from .partition import make_engine
    return make_engine(params, bud["p_max"])


def cmd_partition(params, bud, w):
    from .partition import stage_stream
    eng = _engine(params, bud)
    rows, gaps, stops = [], [], []
    for st in stage_stream(eng, int(bud["partition_depth"])):
        alive = sum(e.length for e in st.elements)
        rows.append((st.n, len(st.elements), len(st.gaps), len(st.new_stops),
                     len(st.deep), st.flags, alive / (2 * eng.lam_len)))
        gaps.extend(st.gaps)
        stops.extend((r.k, r.lo, r.hi, r.S, r.sign) for r in st.new_stops)
    w.csv("stages.csv", ["n", "elements", "gaps", "new_stops", "deep", "glue_flags",
                         "alive_fraction"], rows)
    w.csv("gaps.csv", ["order", "lo", "hi"], gaps)
    w.csv("stops.csv", ["k", "lo", "hi", "S", "sign"], stops)
    w.json("partition.json", {"depth": bud["partition_depth"], "stages": len(rows),
                              "alive_fraction": rows[-1][-1], "gaps": len(gaps),
                              "stops": len(stops)})
    print(f"depth {rows[-1][0]}: {rows[-1][1]} elements, alive fraction {rows[-1][-1]:.6f}")


def _induce(params, bud, strict=True):
    from .partition import induce
    eng = _engine(params, bud)
    return eng, induce(eng, int(bud["samples"]), int(bud["track_depth"]),
                       int(bud["seed"]), generations=int(bud["generations"]),
                       strict=strict)


def cmd_induce(params, bud, w):
    eng, ind = _induce(params, bud)
    w.csv("tail.csv", ["n", "mass"], zip(ind.tail_n, ind.tail_mass))
    w.csv("branches.csv", ["x", "R", "sign", "lo", "hi"],
          ((b.x, b.R, b.sign, b.lo, b.hi) for b in ind.branches))
    rate, icpt, se = ind.fit
    w.json("induce.json", {"depth": ind.carved_depth, "samples": ind.samples,
                           "omega_fraction": ind.omega_fraction,
                           "unresolved": ind.unresolved,
                           "fit": {"rate": rate, "intercept": icpt, "stderr": se},
                           "lemma_rate": -params.lam / 10,
                           "distortion": ind.distortion})
    print(f"tail rate {rate:.3g} +- {se:.2g}; unresolved {ind.unresolved:.1%}")


def cmd_tower(params, bud, w):
    from .partition import build_tower
    eng, ind = _induce(params, bud)
    tw = build_tower(ind)
    w.csv("tower.csv", ["level", "mass", "weight"],
          zip(tw.levels, tw.level_mass, tw.weights))
    w.json("tower.json", {"mean_R": tw.mean_R, "rho": tw.rho, "C1": tw.C1, "C2": tw.C2,
                          "truncated_mass": tw.truncated_mass})
    print(f"mean return {tw.mean_R:.1f}; base weight {tw.rho:.3g}")


def _horseshoe(params, bud):
    from .thermo import find_horseshoe
    return find_horseshoe(params, int(bud["m"]), bud["window"])


def _observable(params, bud):
    from .ldp import observable
    return observable(bud["observable"], params.a)


def cmd_horseshoe(params, bud, w):
    hs = _horseshoe(params, bud)
    w.json("horseshoe.json", hs.as_dict())
    print(f"m={hs.m}: q={hs.q} branches")


def cmd_equilibrium(params, bud, w):
    from .thermo import cylinders, equilibrium_nu_k, spread_measure
    hs = _horseshoe(params, bud)
    phi = _observable(params, bud)
    tree = cylinders(hs, int(bud["k"]))
    nu, proxy = equilibrium_nu_k(tree, {phi.id: phi})
    sp = spread_measure(hs, nu)
    w.json("equilibrium.json", {"proxy": proxy, "nu_k": nu.as_dict(),
                                "spread": sp.as_dict(),
                                "child_sum_error": tree.child_sum_error(),
                                "ratio_bound": tree.ratio_bound()})
    print(f"proxy {proxy:.6g}; spread free energy {sp.free_energy:.3g}")


def cmd_pressure(params, bud, w):
    from .ldp import pressure_cgf
    from .thermo import cylinders, pressure_curve
    phi = _observable(params, bud)
    pc = pressure_cgf(params, phi, _linspace(bud["t_grid"]), bud["cgf_n_grid"],
                      int(bud["cgf_samples"]), int(bud["seed"]))
    w.csv("pressure_cgf.csv", ["t", "P", "stderr"], pc.rows())
    hs = _horseshoe(params, bud)
    tree = cylinders(hs, int(bud["k"]))
    curve = pressure_curve(tree, phi, _linspace(bud["s_grid"]))
    w.csv("pressure_horseshoe.csv", ["s", "p", "t"], curve)
    print(f"CGF on {pc.t.size} points; min effective sample size {pc.ess_min:.0f}")


def cmd_rate(params, bud, w):
    from .ldp import deviation_rate
    phi = _observable(params, bud)
    rs = deviation_rate(params, [phi], [bud["b"]], bud["n_grid"],
                        int(bud["rate_samples"]), int(bud["seed"]))
    w.csv("rate.csv", ["n", "estimate", "ci_lo", "ci_hi", "censored"], rs.rows())
    w.json("rate.json", {"fit": {"rate": rs.fit[0], "intercept": rs.fit[1],
                                 "stderr": rs.fit[2]}, "hits": rs.hits})
    print(f"rate {rs.fit[0]:.4g} +- {rs.fit[2]:.2g}")


def cmd_envelope(params, bud, w):
    from .ldp import legendre_transform, pressure_cgf, variational_envelope
    phi = _observable(params, bud)
    pc = pressure_cgf(params, phi, _linspace(bud["t_grid"]), bud["cgf_n_grid"],
                      int(bud["cgf_samples"]), int(bud["seed"]))
    leg = legendre_transform(pc.t, pc.P)
    tg = _linspace(bud["envelope_t_grid"])
    hs = [(int(bud["m"]), bud["window"])]
    env = variational_envelope(params, phi, tg, horseshoes=hs, k=int(bud["k"]),
                               period_max=int(bud["period_max"]),
                               s_grid=_linspace(bud["s_grid"]), legendre=leg)
    w.csv("envelope.csv", ["t", "upper", "lower", "legendre"], env.rows())
    print(f"envelope max {np.nanmax(env.upper):.3g}")


def cmd_crosscheck(params, bud, w):
    from .ldp import ldp_crosscheck
    phi = _observable(params, bud)
    tg = bud["t_grid"]
    cc = ldp_crosscheck(params, phi, float(bud["b"]), {
        "samples": int(bud["rate_samples"]), "n_grid": bud["n_grid"],
        "cgf_samples": int(bud["cgf_samples"]), "cgf_n_grid": bud["cgf_n_grid"],
        "t_grid": tg, "k": int(bud["k"]), "period_max": int(bud["period_max"]),
        "horseshoes": [[int(bud["m"]), bud["window"]]], "seed": int(bud["seed"]),
        "floor": float(bud["floor"])})
    w.json("crosscheck.json", cc.as_dict())
    print(f"empirical {cc.empirical[0]:.4g}, variational {cc.variational[0]:.4g}, "
          f"legendre {cc.legendre[0]:.4g}: {'pass' if cc.passed else 'FAIL'}")


def cmd_verify_lemmas(params, bud, w):
    from .lemmas import LEMMA_IDS, verify_core_lemma
    rows, reps = [], []
    n_for = {"dist": 10, "exp": 20, "exp2": 20, "reclem2": params.depth,
             "bdd": int(bud["track_depth"]) // 10, "subl": int(bud["track_depth"]) // 4}
    for lid in LEMMA_IDS:
        count = int(bud["lemma_samples"])
        if lid in ("bdd", "subl"):
            count = max(10, count // 5)
        r = verify_core_lemma(lid, params, n_for.get(lid), count, int(bud["seed"]))
        reps.append(r.as_dict())
        rows.append((lid, r.passed, r.worst, r.bound, r.margin, r.samples))
        print(f"{lid:9s} {'pass' if r.passed else 'FAIL'}  margin={r.margin:.4g}")
    w.csv("lemmas.csv", ["lemma", "pass", "worst", "bound", "margin", "samples"], rows)
    w.json("lemmas.json", {"reports": reps})


HANDLERS = {"check": cmd_check, "table": cmd_table, "partition": cmd_partition,
            "induce": cmd_induce, "tower": cmd_tower, "horseshoe": cmd_horseshoe,
            "equilibrium": cmd_equilibrium, "pressure": cmd_pressure, "rate": cmd_rate,
            "envelope": cmd_envelope, "crosscheck": cmd_crosscheck,
            "verify-lemmas": cmd_verify_lemmas}


def build_parser():
    ap = argparse.ArgumentParser(prog="ldplab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config or an emitted manifest")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--threads", type=int, help="cap on worker threads")
    for short in SHORTHANDS:
        ap.add_argument(f"--{short}", dest=f"short_{short}", metavar="VALUE")
    return ap


def _split_overrides(extra):
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ValidationError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ValidationError(f"missing value for {tok}")
            val = extra[i + 1]
            i += 1
        out.append((key, _parse_value(val)))
        i += 1
    return out


def run(argv=None):
    """Run one subcommand; returns the exit code."""
    ap = build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
        overrides = _split_overrides(extra)
        for short, dotted in SHORTHANDS.items():
            val = getattr(args, f"short_{short}")
            if val is not None:
                overrides.append((dotted, _parse_value(val)))
        if args.seed is not None:
            overrides.append(("budgets.seed", args.seed))
        if args.out is not None:
            overrides.append(("outputs.directory", args.out))
        cfg = load_config(args.config, overrides)
        params = make_params(cfg)
        if args.threads is not None:
            if args.threads < 1:
                raise ValidationError("--threads must be positive")
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        w = Writer(cfg["outputs"]["directory"], args.command, cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    try:
        HANDLERS[args.command](params, cfg["budgets"], w)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        w.manifest("validation-error", cfg["budgets"]["seed"])
        return 1
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        w.manifest("inconclusive", cfg["budgets"]["seed"])
        return 3
    except ComputationError as exc:
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        w.manifest("computation-error", cfg["budgets"]["seed"])
        return 2
    w.manifest("ok", cfg["budgets"]["seed"])
    return 0


def main():
    sys.exit(run())
