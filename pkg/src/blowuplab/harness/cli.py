"""Command-line entry point.

Verbs: ``run``, ``sweep``, ``check <oracle>``, ``zeroset <potential-csv> <x0>``,
``report <dir>`` and ``presets``.  The exit code is 0 exactly when every
acceptance assertion passed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import oracles
from ..problem import Nonlinearity, load_two_column_csv
from ..zeroset import ZeroTouchesBoundary, isolating_subdomain, nesting_holds
from .config import ConfigError, RunConfig, list_presets
from .experiment import ExperimentError, PresetInvalid, rebuild_report, run_experiment, sweep
from .report import ReportIOError, read_report, sanitize

log = logging.getLogger("blowuplab")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _emit(doc: dict) -> None:
    print(json.dumps(sanitize(doc), indent=1, sort_keys=True))


def _overrides(items) -> dict[str, str]:
    out = {}
    for it in items or []:
        key, sep, val = it.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {it!r}")
        out[key.strip()] = val.strip()
    return out


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    ov = _overrides(args.set)
    if ov:
        sweep_sec = cfg.sections.get("sweep")
        cfg = cfg.with_overrides(ov)
        if sweep_sec is not None and getattr(args, "keep_sweep", False):
            cfg.sections["sweep"] = sweep_sec
    return cfg


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else None
    rep = run_experiment(cfg, out, resume_dir=args.resume, resume_index=args.resume_index)
    for a in rep.acceptance:
        log.info("%s %s %s -> %s", "PASS" if a["passed"] else "FAIL", a["metric"], a["rule"], a["value"])
    _emit({"name": rep.name, "status": rep.summary["status"], "T_hat": rep.blowup_report.T_hat,
           "passed": rep.passed, "acceptance": rep.acceptance, "out_dir": str(rep.out_dir) if rep.out_dir else None})
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    args.keep_sweep = True
    cfg = _load(args)
    out = Path(args.out or cfg.get("output", "directory") or f"sweep-{cfg.name}")
    res = sweep(cfg, out, workers=args.workers)
    _emit({"name": cfg.name, "cells": len(res.rows), "failed_cells": sum(1 for r in res.rows if r["error"]),
           "aggregate_csv": str(res.aggregate_csv), "checks": res.checks, "passed": res.passed})
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_report(args) -> int:
    doc = read_report(args.dir)
    out = {"name": doc["name"], "status": doc["status"], "T_hat": doc["blowup"]["T_hat"],
           "acceptance": doc["acceptance"], "files": doc["files"], "schema_valid": True}
    ok = all(a["passed"] for a in doc["acceptance"])
    if args.rebuild:
        rep = rebuild_report(args.dir)
        fresh = sanitize(rep.summary)
        same = {k: fresh[k] == doc[k] for k in ("blowup", "diagnostics", "acceptance")}
        out["reproduced"] = same
        ok = ok and all(same.values())
    _emit(out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_zeroset(args) -> int:
    xs, vs = load_two_column_csv(args.csv)
    i = int(np.argmin(np.abs(xs - args.x0)))
    bnd = np.zeros(xs.shape, dtype=bool)
    bnd[[0, -1]] = True
    try:
        iso = isolating_subdomain(vs, i, bnd, zero_tol=args.zero_tol)
    except ZeroTouchesBoundary as exc:
        _emit({"x0": float(xs[i]), "exploratory": True, "reason": str(exc)})
        return EXIT_FAIL
    d = iso.as_dict(xs)
    d.update({"x0": float(xs[i]), "nesting_holds": nesting_holds(vs, [1.0 / 2**k for k in range(7)], bnd)})
    if args.out:
        path = Path(args.out)
        with open(path, "w") as fh:
            fh.write("x,in_mask\n")
            for xv, m in zip(xs.tolist(), iso.omega0.mask.tolist()):
                fh.write(f"{xv!r},{int(m)}\n")
        d["mask_csv"] = str(path)
    _emit(d)
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        cfg = RunConfig.load(name)
        print(f"{name}\t{cfg.get('experiment', 'description', '')}")
    return EXIT_OK


# check <oracle> ------------------------------------------------------------

def check_ode(a) -> dict:
    ode = oracles.exact_ode_blowup(a.u0, a.p, a.A)
    t = np.linspace(0.0, ode.T, 50, endpoint=False)
    amp = (ode.T - t) ** ode.alpha * ode.u(t)
    dev = float(np.max(np.abs(amp / ode.amplitude - 1.0)))
    return {"T": ode.T, "alpha": ode.alpha, "amplitude": ode.amplitude, "amplitude_deviation": dev,
            "passed": dev < 1e-12}


def check_cutoff(a) -> dict:
    checks = oracles.cutoff_feasibility(a.l, a.sigma)
    d = {"checks": [c.describe() for c in checks]}
    try:
        prof = oracles.cutoff_build(a.R, a.l, a.sigma, a.n, a.points)
    except oracles.InfeasibleCutoff as exc:
        d.update({"passed": False, "reason": str(exc)})
        return d
    fine = oracles.cutoff_build(a.R, a.l, a.sigma, a.n, 2 * a.points - 1)
    change = abs(fine.C_inferred - prof.C_inferred) / prof.C_inferred
    d.update(prof.as_dict())
    d.update({"C_refined": fine.C_inferred, "refinement_change": change,
              "passed": bool(np.isfinite(prof.C_inferred) and change < 0.05)})
    return d


def check_threshold(a) -> dict:
    r = oracles.comparison_threshold_check(a.p, a.A, a.k, a.eps, a.C_eps, a.tau0, a.B)
    return {"passed": r.passed, "margin": r.margin, "B": r.B}


def check_local_bound(a) -> dict:
    try:
        r = oracles.local_bound_exponent(a.p, a.k, a.eps)
    except ValueError as exc:
        return {"passed": False, "reason": str(exc)}
    return {"passed": r.admissible, "m": r.m, "alpha": r.alpha}


def check_heat_kernel(a) -> dict:
    ts = np.geomspace(a.t_min, a.t_max, a.nt)
    xs = np.linspace(0, 1, a.nx)
    sym = 0.0
    mass = 0.0
    for t in ts:
        G = oracles.dirichlet_heat_kernel(t, xs[:, None], xs[None, :]).G
        sym = max(sym, float(np.max(np.abs(G - G.T))))
        mass = max(mass, float(oracles.heat_kernel_mass(t, xs).max()))
    fit = oracles.heat_kernel_lower_bound_fit(ts, xs, xs)
    ok = sym <= 1e-12 and mass < 1 and fit.c1 > 0 and fit.c2 > 0 and fit.violations == 0
    return {"symmetry_defect": sym, "max_mass": mass, "c1": fit.c1, "c2": fit.c2, "violations": fit.violations,
            "samples": fit.samples, "passed": ok}


def check_rescaled(a) -> dict:
    f = Nonlinearity(a.kind, a.param)
    v = np.linspace(0.0, a.v_max, 101)
    g = oracles.rescaled_nonlinearity(f, a.lam, v)
    dev = float(np.max(np.abs(g - v**a.param) / np.maximum(v**a.param, 1.0)))
    return {"max_relative_deviation_from_v^p": dev, "passed": dev <= a.tol}


ORACLES = {
    "ode": (check_ode, [("--u0", float, 1.0), ("--p", float, 2.0), ("--A", float, 1.0)]),
    "cutoff": (check_cutoff, [("--R", float, 1.0), ("--l", int, 2), ("--sigma", float, 1.0), ("--n", int, 1),
                              ("--points", int, 20001)]),
    "threshold": (check_threshold, [("--p", float, 2.0), ("--A", float, 1.0), ("--k", float, 0.5),
                                    ("--eps", float, 0.01), ("--C-eps", float, 1.0), ("--tau0", float, 0.1),
                                    ("--B", float, None)]),
    "local-bound": (check_local_bound, [("--p", float, 2.0), ("--k", float, 0.5), ("--eps", float, 0.01)]),
    "heat-kernel": (check_heat_kernel, [("--t-min", float, 0.01), ("--t-max", float, 1.0), ("--nt", int, 12),
                                        ("--nx", int, 41)]),
    "rescaled-f": (check_rescaled, [("--kind", str, "shifted_power"), ("--param", float, 2.0),
                                    ("--lam", float, 1e-3), ("--v-max", float, 10.0), ("--tol", float, 1e-3)]),
}


def cmd_check(args) -> int:
    fn = ORACLES[args.oracle][0]
    inputs = {k: v for k, v in vars(args).items() if k not in ("func", "oracle", "verbose", "verb")}
    try:
        res = fn(args)
    except ValueError as exc:
        res = {"passed": False, "reason": str(exc)}
    _emit({"oracle": args.oracle, "inputs": inputs, **res})
    return EXIT_OK if res.get("passed") else EXIT_FAIL


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blowuplab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def cfg_args(p):
        p.add_argument("config", help="config file or preset name")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")

    p = sub.add_parser("run", help="run one experiment")
    cfg_args(p)
    p.add_argument("--resume", help="trajectory directory to resume from")
    p.add_argument("--resume-index", type=int, help="snapshot index to resume from (default: last)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the cartesian product of the [sweep] axes")
    cfg_args(p)
    p.add_argument("--workers", type=int, help="process count (default: $BLOWUPLAB_WORKERS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="evaluate a standalone oracle")
    osub = p.add_subparsers(dest="oracle", required=True)
    for name, (_, opts) in ORACLES.items():
        op = osub.add_parser(name)
        for flag, typ, default in opts:
            op.add_argument(flag, type=typ, default=default)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("zeroset", help="isolating subdomain of a sampled potential")
    p.add_argument("csv", help="two-column CSV of x, V(x)")
    p.add_argument("x0", type=float)
    p.add_argument("--out", help="write the mask as CSV")
    p.add_argument("--zero-tol", type=float, default=1e-6, help="largest |V(x0)| treated as a zero")
    p.set_defaults(func=cmd_zeroset)

    p = sub.add_parser("report", help="validate a report directory")
    p.add_argument("dir")
    p.add_argument("--rebuild", action="store_true", help="recompute diagnostics from the stored trajectory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, PresetInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (ExperimentError, ReportIOError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except ValueError as exc:  # malformed input files
        print(f"input error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
