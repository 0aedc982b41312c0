"""Experiment pipeline: validate, solve, diagnose, assert, report."""

from __future__ import annotations

import csv
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .. import _kernels as K
from ..diagnostics import (
    fit_type_one_rate,
    kaplan_functional,
    monotone_certificate,
    monotone_in_time,
    nondegeneracy_check,
    ode_deviation,
    symmetry_monotonicity_check,
    weak_rate_fit,
)
from ..oracles import exact_ode_blowup, find_supersolution, supersolution_dominates, type_one_amplitude
from ..problem import ProblemSpec, monotone_residual, validate_hypotheses
from ..solver import (BlowupReport, TerminalStatus, Trajectory, run_to_blowup,
                      summarize_trajectory)
from ..zeroset import RegionMask, ZeroTouchesBoundary, isolating_subdomain
from .config import ConfigError, RunConfig

WORKERS_ENV = "BLOWUPLAB_WORKERS"
NOT_APPLICABLE = "not_applicable"

# diagnostics that only make sense after a detected blowup
NEEDS_BLOWUP = ("exact_ode", "rate", "nondegeneracy", "supersolution", "weak_rate", "global_blowup",
                "origin_excluded")


class PresetInvalid(ValueError):
    """A config's declared hypotheses do not hold for the problem it builds."""


class ExperimentError(RuntimeError):
    pass


@dataclass(eq=False)
class ExperimentReport:
    """Everything a run produced.

    ``summary`` is the JSON-serializable part; ``series`` and ``masks`` feed
    the CSV files; ``trajectory``, ``spec`` and ``blowup_report`` are kept for
    programmatic use and are not serialized beyond the stored trajectory.
    """

    name: str
    summary: dict
    series: dict[str, tuple[list[str], np.ndarray]]
    masks: dict[str, np.ndarray]
    trajectory: Trajectory
    spec: ProblemSpec
    blowup_report: BlowupReport
    out_dir: Path | None = None
    files: list[str] = field(default_factory=list)

    @property
    def acceptance(self) -> list[dict]:
        return self.summary["acceptance"]

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.acceptance)

    def metric(self, path: str):
        return lookup(self.summary, path)

    def diagnostic(self, name: str) -> dict:
        return self.summary["diagnostics"][name]


def lookup(tree: dict, path: str):
    node = tree
    for part in path.split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.lstrip("-").isdigit():
            node = node[int(part)]
        else:
            raise KeyError(path)
    return node


# --------------------------------------------------------------------------
# preset hypotheses
# --------------------------------------------------------------------------

def _interval(cfg: RunConfig, key: str) -> tuple[float, float]:
    parts = [p.strip() for p in cfg.get("hypotheses", key).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"[hypotheses] {key} needs two comma-separated values")
    return cfg._expr(parts[0]), cfg._expr(parts[1])


def check_preset_hypotheses(cfg: RunConfig, spec: ProblemSpec) -> list[dict]:
    """Evaluate the ``[hypotheses]`` section; every entry must hold."""
    out = []
    x, V, u0 = spec.x, spec.V, spec.initial_data
    scale = max(float(np.max(np.abs(V))), 1e-300)
    uscale = max(float(np.max(np.abs(u0))), 1e-300)
    tol = 1e-12
    h = cfg.section("hypotheses")

    def add(name, ok, detail):
        out.append({"name": name, "passed": bool(ok), "detail": detail})

    if cfg.getbool("hypotheses", "monotone_residual"):
        r = monotone_residual(spec)
        worst = float(r.min())
        add("monotone_residual", worst >= -tol * max(float(np.abs(r).max()), 1.0),
            f"min of Lap(u0) + V f(u0) = {worst:.6g}")
    if "zero_at" in h:
        x0 = cfg.getfloat("hypotheses", "zero_at")
        i = spec.domain.nearest_node(x0)
        add("zero_at", abs(x[i] - x0) <= 1e-12 * max(1.0, abs(x0)) and abs(V[i]) <= tol,
            f"node {i} at x = {x[i]:.6g} carries V = {V[i]:.3g}")
    if "nonincreasing_on" in h:
        a, b = _interval(cfg, "nonincreasing_on")
        sel = (x >= a - tol) & (x <= b + tol)
        dv = float(np.max(np.diff(V[sel]), initial=0.0))
        du = float(np.max(np.diff(u0[sel]), initial=0.0))
        add("nonincreasing_on", dv <= tol * scale and du <= tol * uscale,
            f"largest increase on [{a:.6g}, {b:.6g}]: V {dv:.3g}, u0 {du:.3g}")
    if "bounded_by_left_value_on" in h:
        a, b = _interval(cfg, "bounded_by_left_value_on")
        sel = (x >= a - tol) & (x <= b + tol)
        cap = float(spec.potential(np.array([a]))[0])
        lo, hi = float(V[sel].min()), float(V[sel].max())
        add("bounded_by_left_value_on", lo >= -tol and hi <= cap + tol * scale,
            f"V in [{lo:.6g}, {hi:.6g}] on [{a:.6g}, {b:.6g}], V({a:.6g}) = {cap:.6g}")
    if cfg.getbool("hypotheses", "even"):
        dv = float(np.max(np.abs(V - V[::-1])))
        du = float(np.max(np.abs(u0 - u0[::-1])))
        sym = np.allclose(x, -x[::-1], atol=1e-12)
        add("even", sym and dv <= tol * scale and du <= tol * uscale,
            f"grid symmetric: {sym}, odd parts V {dv:.3g}, u0 {du:.3g}")
    if cfg.getbool("hypotheses", "subcritical"):
        c = spec.constants
        add("subcritical", c is not None and c.subcritical,
            f"p = {c.p if c else None}, p_S = {c.p_S if c else None}")
    if cfg.getbool("hypotheses", "weighted_exponent_bound"):
        # 1 < p < 1 + 2 sigma / (n - 1), equality allowed for n = 3
        n, p = spec.domain.dimension, spec.nonlinearity.param
        sigma = spec.potential.value if spec.potential.form == "power_of_radius" else math.nan
        bound = 1 + 2 * sigma / (n - 1) if n > 1 else math.inf
        ok = p < bound or (n == 3 and p == bound)
        add("weighted_exponent_bound", ok, f"p = {p:g}, 1 + 2 sigma/(n-1) = {bound:g}")
    if cfg.getbool("hypotheses", "constant_initial"):
        add("constant_initial", float(np.ptp(u0)) == 0.0, f"u0 spread {float(np.ptp(u0)):.3g}")
    if cfg.getbool("hypotheses", "constant_potential"):
        add("constant_potential", float(np.ptp(V)) == 0.0, f"V spread {float(np.ptp(V)):.3g}")
    known = {"monotone_residual", "zero_at", "nonincreasing_on", "bounded_by_left_value_on", "even",
             "subcritical", "weighted_exponent_bound", "constant_initial", "constant_potential"}
    unknown = set(h) - known
    if unknown:
        raise ConfigError(f"unknown hypotheses: {', '.join(sorted(unknown))}")
    return out


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

@dataclass
class _Context:
    cfg: RunConfig
    spec: ProblemSpec
    traj: Trajectory
    blowup: BlowupReport
    validation: dict
    series: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)

    def opt(self, name, key, default=None):
        return self.cfg.getfloat(f"diagnostics.{name}", key, default)

    def raw(self, name, key, default=None):
        return self.cfg.get(f"diagnostics.{name}", key, default)

    @property
    def T_hat(self) -> float:
        return self.blowup.T_hat

    def node(self, name: str, key: str = "x0") -> int:
        v = self.raw(name, key, "argmax")
        if v.strip().lower() == "argmax":
            return self.traj.final.argmax
        return self.spec.domain.nearest_node(self.opt(name, key))


def _interval_mask(ctx: _Context, name: str) -> RegionMask:
    lo = ctx.opt(name, "lo")
    hi = ctx.opt(name, "hi")
    if lo is None or hi is None:
        a, b = ctx.spec.domain.extent
        lo, hi = a + 0.25 * (b - a), b - 0.25 * (b - a)  # inner half
    return RegionMask.from_interval(ctx.spec.x, lo, hi)


def _d_exact_ode(ctx: _Context) -> dict:
    spec = ctx.spec
    if spec.nonlinearity.kind != "power":
        raise ConfigError("exact_ode needs f = u^p")
    u0 = float(np.max(spec.initial_data))
    A = float(np.max(spec.V))
    ode = exact_ode_blowup(u0, spec.nonlinearity.param, A)
    return {"u0": u0, "A": A, "T_exact": ode.T, "T_hat_abs_error": abs(ctx.T_hat - ode.T),
            "amplitude_exact": ode.amplitude}


def _d_rate(ctx: _Context) -> dict:
    fit = fit_type_one_rate(ctx.traj, ctx.T_hat, (ctx.opt("rate", "u_lo", 1e3), ctx.opt("rate", "u_hi", 1e10)),
                            min_points=int(ctx.opt("rate", "min_points", 20)))
    t, m = ctx.traj.times, ctx.traj.max_values
    sel = t < ctx.T_hat
    ctx.series["rate_fit"] = (["t", "tau", "max_u"], np.column_stack([t[sel], ctx.T_hat - t[sel], m[sel]]))
    ctx.cache["rate"] = fit
    return fit.as_dict()


def _d_nondegeneracy(ctx: _Context) -> dict:
    c = ctx.spec.constants
    if c is None:
        raise ConfigError("nondegeneracy needs a power-like nonlinearity")
    i = ctx.node("nondegeneracy")
    A = ctx.opt("nondegeneracy", "A", float(ctx.spec.V[i]))
    res = nondegeneracy_check(ctx.traj, i, A, c.alpha, c.kappa, ctx.T_hat,
                              slack=ctx.opt("nondegeneracy", "slack", 0.9),
                              decades=ctx.opt("nondegeneracy", "decades", 1.0))
    d = res.as_dict()
    d.update({"x0": float(ctx.spec.x[i]), "A": A, "kappa": c.kappa, "alpha": c.alpha,
              "relative_gap": abs(res.liminf_hat / res.threshold - 1.0)})
    return d


def _d_deviation(ctx: _Context) -> dict:
    mask = _interval_mask(ctx, "deviation")
    dev = ode_deviation(ctx.traj, ctx.spec, mask, ctx.opt("deviation", "u_threshold", 1e4),
                        ctx.opt("deviation", "K_floor", 1e6))
    level = ctx.opt("deviation", "level", 0.1)
    decades = ctx.opt("deviation", "decades", 2.0)
    ctx.series["deviation"] = (["t", "max_u", "ratio", "running_max"],
                               np.column_stack([dev.times, dev.max_u, dev.ratio, dev.running_max]))
    d = dev.as_dict()
    d.update({"level": level, "falls_below": dev.falls_below(level), "decades": decades,
              "nonincreasing": dev.nonincreasing_over(decades),
              "raw_nonincreasing": dev.nonincreasing_over(decades, series="raw"),
              "mask_extent": [float(ctx.spec.x[mask.mask].min()), float(ctx.spec.x[mask.mask].max())]})
    return d


def _omega0(ctx: _Context):
    if "omega0" not in ctx.cache:
        if "zeroset" not in ctx.cfg.diagnostics:
            raise ConfigError("this diagnostic needs [diagnostics.zeroset]")
        x0 = ctx.opt("zeroset", "x0", 0.0)
        i = ctx.spec.domain.nearest_node(x0)
        bnd = np.zeros(ctx.spec.x.shape, dtype=bool)
        bnd[ctx.spec.domain.boundary_nodes] = True
        try:
            ctx.cache["omega0"] = isolating_subdomain(ctx.spec.V, i, bnd)
        except ZeroTouchesBoundary as exc:
            ctx.cache["omega0"] = exc
    return ctx.cache["omega0"]


def _d_zeroset(ctx: _Context) -> dict:
    iso = _omega0(ctx)
    if isinstance(iso, ZeroTouchesBoundary):
        return {"exploratory": True, "reason": str(iso)}
    x = ctx.spec.x
    d = iso.as_dict(x)
    m = iso.omega0.mask
    d["max_u_on_omega0"] = float(max(s.u[m].max() for s in ctx.traj.snapshots))
    d["max_u"] = float(ctx.traj.final.max_u)
    d["blowup_set_disjoint"] = not bool(np.any(ctx.blowup.blowup_set_mask.mask & m))
    ctx.masks["omega0"] = m
    return d


def _d_jcert(ctx: _Context) -> dict:
    eps = ctx.opt("jcert", "epsilon", 1e-3)
    region = ctx.raw("jcert", "region", "omega0").strip().lower()
    mask = None
    if region == "omega0":
        iso = _omega0(ctx)
        if isinstance(iso, ZeroTouchesBoundary):
            return {"exploratory": True, "reason": str(iso)}
        mask = iso.omega0
    cert = monotone_certificate(ctx.traj, ctx.spec, eps, mask)
    ctx.series["jcert"] = (["t", "min_J"], np.column_stack([cert.times, cert.min_J]))
    d = cert.as_dict()
    d["region"] = region
    return d


def _d_supersolution(ctx: _Context) -> dict:
    spec = ctx.spec
    c = spec.constants
    if c is None:
        raise ConfigError("supersolution needs a power-like nonlinearity")
    x0 = ctx.opt("supersolution", "x0", ctx.opt("zeroset", "x0", 0.0))
    rho = ctx.opt("supersolution", "rho", 0.25)
    C = ctx.opt("supersolution", "C", ctx.validation.get("inferred_growth_constant"))
    region = np.abs(spec.x - x0) <= rho
    M = type_one_amplitude(ctx.traj, ctx.T_hat, c.alpha, region)
    search = find_supersolution(M, spec.potential, C, c.p, x0, rho, ctx.T_hat,
                                u0_max=float(spec.initial_data[region].max()), n=spec.domain.dimension)
    ok, worst = supersolution_dominates(search.supersolution, ctx.traj)
    d = search.as_dict()
    d.update({"C": C, "dominates": ok, "worst_ratio": worst, "condition_positive": search.condition_min > 0})
    return d


def _d_monotone(ctx: _Context) -> dict:
    ok, worst = monotone_in_time(ctx.traj, ctx.opt("monotone", "slack", 1e-10))
    return {"holds": ok, "worst_relative_decrease": worst}


def _d_symmetry(ctx: _Context) -> dict:
    L = ctx.opt("symmetry", "L", 1.0 / 3.0)
    tol = ctx.opt("symmetry", "tol", 1e-8)
    even = ux = 0.0
    origin = True
    proven = True
    holds = True
    for s in ctx.traj.snapshots:
        r = symmetry_monotonicity_check(s.u, ctx.spec.x, L)
        sc = max(r.scale, 1e-300)
        even = max(even, r.even_defect / sc)
        ux = max(ux, r.ux_max_on_0L / sc)
        origin &= r.max_at_origin
        proven &= r.proven_regime
        holds &= r.holds(tol)
    return {"L": L, "tol": tol, "max_even_defect": even, "max_ux_on_0L": ux, "max_at_origin": bool(origin),
            "proven_regime": bool(proven), "holds": bool(holds), "frames": len(ctx.traj)}


def _d_weak_rate(ctx: _Context) -> dict:
    f = ctx.spec.nonlinearity
    if f.kind != "log_power":
        raise ConfigError("weak_rate needs f = u log(1+u)^a")
    fit = weak_rate_fit(ctx.traj, ctx.T_hat, f.param, min_points=int(ctx.opt("weak_rate", "min_points", 10)))
    return fit.as_dict()


def _d_kaplan(ctx: _Context) -> dict:
    ell = ctx.opt("kaplan", "ell", 1.0)
    t = ctx.traj.times
    E = np.array([kaplan_functional(s.u, ctx.spec.x, ell) for s in ctx.traj.snapshots])
    ctx.series["kaplan"] = (["t", "E"], np.column_stack([t, E]))
    slack = 1e-12 * np.maximum(np.abs(E[1:]), 1.0)
    # convexity near T: difference quotients nondecreasing over the later half of the frames
    late = slice(len(t) // 2, None)
    q = np.diff(E[late]) / np.diff(t[late])
    return {"ell": ell, "initial": float(E[0]), "final": float(E[-1]),
            "nondecreasing": bool(np.all(np.diff(E) >= -slack)),
            "convex_near_T": bool(q.size < 2 or np.all(np.diff(q) >= -1e-9 * np.abs(q[1:])))}


def _d_global_blowup(ctx: _Context) -> dict:
    level = ctx.opt("global_blowup", "level", 1e6)
    fixed = ctx.spec.domain.stencil[3]
    u = ctx.traj.final.u[~fixed]
    return {"level": level, "min_interior_u": float(u.min()), "holds": bool(u.min() > level)}


def _d_origin_excluded(ctx: _Context) -> dict:
    x = ctx.spec.x
    i = int(np.argmin(np.abs(x)))
    m = ctx.blowup.blowup_set_mask.mask
    u = ctx.traj.final.u
    return {"origin_in_blowup_set": bool(m[i]), "blowup_set_min_x": float(np.abs(x[m]).min()),
            "u_origin_over_max": float(u[i] / u.max()), "holds": not bool(m[i])}


_DIAGNOSTICS = {
    "exact_ode": _d_exact_ode,
    "rate": _d_rate,
    "nondegeneracy": _d_nondegeneracy,
    "deviation": _d_deviation,
    "zeroset": _d_zeroset,
    "jcert": _d_jcert,
    "supersolution": _d_supersolution,
    "monotone": _d_monotone,
    "symmetry": _d_symmetry,
    "weak_rate": _d_weak_rate,
    "kaplan": _d_kaplan,
    "global_blowup": _d_global_blowup,
    "origin_excluded": _d_origin_excluded,
}


def run_diagnostics(cfg: RunConfig, spec: ProblemSpec, traj: Trajectory, blowup: BlowupReport,
                    validation: dict) -> tuple[dict, dict, dict]:
    """Run the configured diagnostics in a fixed order.

    Returns (summaries, series, masks).
    """
    ctx = _Context(cfg, spec, traj, blowup, validation)
    out = {}
    selected = set(cfg.diagnostics)
    for name, fn in _DIAGNOSTICS.items():
        if name not in selected:
            continue
        if name in NEEDS_BLOWUP and blowup.status is not TerminalStatus.BLOWUP:
            out[name] = {NOT_APPLICABLE: f"no blowup detected (status {blowup.status.value})"}
            continue
        try:
            out[name] = fn(ctx)
        except ConfigError:
            raise
        except Exception as exc:
            raise ExperimentError(f"diagnostic {name!r} failed: {type(exc).__name__}: {exc}") from exc
    ctx.masks["blowup_set"] = blowup.blowup_set_mask.mask
    return out, ctx.series, ctx.masks


# --------------------------------------------------------------------------
# acceptance rules
# --------------------------------------------------------------------------

def _number(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def evaluate_rule(value, rule: str) -> bool:
    """Rules: ``> v``, ``>= v``, ``< v``, ``<= v``, ``== v``, ``!= v``,
    ``within c tol`` (absolute), ``rel c tol`` (relative), ``true``, ``false``."""
    parts = rule.split()
    if not parts:
        raise ConfigError("empty acceptance rule")
    op, args = parts[0].lower(), parts[1:]
    if op in ("true", "false"):
        return value is (op == "true")
    if value is None:
        return False
    if op in (">", ">=", "<", "<=", "==", "!="):
        if len(args) != 1:
            raise ConfigError(f"rule {rule!r} needs one operand")
        ref = _number(args[0])
        if isinstance(ref, str) or isinstance(value, (str, bool)):
            a, b = str(value), str(ref)
            if op == "==":
                return a == b
            if op == "!=":
                return a != b
            raise ConfigError(f"rule {rule!r} compares non-numbers")
        v = float(value)
        return {">": v > ref, ">=": v >= ref, "<": v < ref, "<=": v <= ref, "==": v == ref, "!=": v != ref}[op]
    if op in ("within", "rel"):
        if len(args) != 2:
            raise ConfigError(f"rule {rule!r} needs a center and a tolerance")
        c, tol = float(args[0]), float(args[1])
        v = float(value)
        return abs(v - c) <= tol * (abs(c) if op == "rel" else 1.0)
    raise ConfigError(f"unknown rule {rule!r}")


def check_acceptance(cfg: RunConfig, summary: dict) -> list[dict]:
    out = []
    for metric, rule in cfg.acceptance.items():
        try:
            value = lookup(summary, metric)
        except KeyError:
            value = None
        out.append({"metric": metric, "rule": rule, "value": value, "passed": evaluate_rule(value, rule)})
    return out


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def _provenance(cfg: RunConfig, spec: ProblemSpec, wall: float, diag_wall: float) -> dict:
    import numba
    import scipy

    return {
        "version": __version__,
        "backend": cfg.solver_config().backend or K.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "config_source": cfg.source,
        "config": cfg.to_text(),
        "grid": spec.domain.describe(),
        "problem": spec.describe(),
        "solver": cfg.solver_config().as_dict(),
        "wall_time": wall,
        "diagnostics_wall_time": diag_wall,
    }


def prepare(cfg: RunConfig) -> tuple[ProblemSpec, dict, list[dict]]:
    """Build and validate the problem; refuse to continue on a broken preset."""
    spec = cfg.problem()
    val = validate_hypotheses(spec)
    preset = check_preset_hypotheses(cfg, spec)
    bad = [c.name + ": " + c.detail for c in val.failures] + [c["name"] + ": " + c["detail"]
                                                               for c in preset if not c["passed"]]
    if bad:
        raise PresetInvalid(f"{cfg.name}: hypotheses fail ({'; '.join(bad)})")
    return spec, val.as_dict(), preset


def _assemble(cfg, spec, traj, blowup, validation, preset, wall) -> ExperimentReport:
    t0 = time.perf_counter()
    diags, series, masks = run_diagnostics(cfg, spec, traj, blowup, validation)
    diag_wall = time.perf_counter() - t0
    bdict = blowup.as_dict(spec.x)
    bdict["snapshots"] = len(traj)
    bdict["final_time"] = traj.final.t
    bdict["max_u"] = traj.final.max_u
    bdict["argmax_x"] = float(spec.x[traj.final.argmax])
    bdict["events"] = [[t, m] for t, m in traj.events]
    summary = {
        "name": cfg.name,
        "status": blowup.status.value,
        "blowup": bdict,
        "validation": validation,
        "preset_hypotheses": preset,
        "diagnostics": diags,
        "provenance": _provenance(cfg, spec, wall, diag_wall),
    }
    summary["acceptance"] = check_acceptance(cfg, summary)
    series = dict(series)
    series["max_series"] = (["t", "max_u", "argmax_x", "dt", "steps"],
                            np.column_stack([traj.times, traj.max_values, traj.argmax_x, traj.dts,
                                             [s.step_count for s in traj.snapshots]]))
    series["profiles"] = _profiles(traj)
    return ExperimentReport(cfg.name, summary, series, masks, traj, spec, blowup)


def _profiles(traj: Trajectory, count: int = 6) -> tuple[list[str], np.ndarray]:
    idx = np.unique(np.linspace(0, len(traj) - 1, min(count, len(traj))).round().astype(int))
    cols = ["x"] + [f"u_{i}" for i in idx]
    return cols, np.column_stack([traj.x] + [traj.snapshots[i].u for i in idx])


def run_experiment(cfg: RunConfig, out_dir=None, *, resume_dir=None, resume_index: int | None = None,
                   persist: bool | None = None) -> ExperimentReport:
    """Validate, solve, diagnose, check the acceptance rules and write the report.

    Parameters
    ----------
    cfg : RunConfig
    out_dir : path, optional
        Defaults to ``[output] directory``; when neither is set nothing is written.
    resume_dir, resume_index
        Continue from a stored trajectory directory at the given snapshot.
    persist : bool, optional
        Store the trajectory next to the report (default ``[output] trajectory``, on).
    """
    from .report import emit_report

    spec, validation, preset = prepare(cfg)
    if out_dir is None and cfg.get("output", "directory"):
        out_dir = cfg.base_dir / cfg.get("output", "directory")
    if persist is None:
        persist = cfg.getbool("output", "trajectory", True)
    resume = Trajectory.load(resume_dir) if resume_dir is not None else None
    traj_dir = Path(out_dir) / "trajectory" if (out_dir is not None and persist) else None
    t0 = time.perf_counter()
    try:
        traj, blowup = run_to_blowup(spec, cfg.solver_config(), resume=resume, resume_index=resume_index,
                                     persist_dir=traj_dir,
                                     blowup_set_exponent=cfg.getfloat("solver", "blowup_set_exponent", 0.5))
    except Exception as exc:
        raise ExperimentError(f"{cfg.name}: solver failed: {type(exc).__name__}: {exc}") from exc
    wall = time.perf_counter() - t0
    rep = _assemble(cfg, spec, traj, blowup, validation, preset, wall)
    if out_dir is not None:
        emit_report(rep, out_dir)
    return rep


def rebuild_report(directory) -> ExperimentReport:
    """Recompute every diagnostic from a report directory's config echo and stored trajectory."""
    import json

    d = Path(directory)
    stored = json.loads((d / "report.json").read_text())
    prov = stored["provenance"]
    cfg = RunConfig.from_text(prov["config"], prov["config_source"], d)
    spec, validation, preset = prepare(cfg)
    traj = Trajectory.load(d / "trajectory")
    blowup = summarize_trajectory(traj, spec, blowup_set_exponent=cfg.getfloat("solver", "blowup_set_exponent", 0.5))
    return _assemble(cfg, spec, traj, blowup, validation, preset, prov["wall_time"])


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def worker_count(default: int | None = None) -> int:
    v = os.environ.get(WORKERS_ENV)
    if v:
        n = int(v)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return default or 1


def _aggregate_columns(cfg: RunConfig) -> list[str]:
    cols = cfg.get("aggregate", "columns", "")
    return [c.strip() for c in cols.split(",") if c.strip()]


def _run_cell(args) -> dict:
    cfg, overrides, index, out_dir = args
    row = {"cell": index, **overrides, "status": "", "T_hat": math.nan, "exponent_hat": math.nan,
           "passed": False, "error": ""}
    try:
        cell = cfg.with_overrides(overrides)
        rep = run_experiment(cell, out_dir)
        row["status"] = rep.summary["status"]
        row["T_hat"] = rep.blowup_report.T_hat
        rate = rep.summary["diagnostics"].get("rate", {})
        row["exponent_hat"] = rate.get("exponent_hat", math.nan)
        row["passed"] = rep.passed
        for a in rep.acceptance:
            row[f"ok:{a['metric']}"] = a["passed"]
        for c in _aggregate_columns(cfg):
            try:
                row[c] = lookup(rep.summary, c)
            except KeyError:
                row[c] = ""
    except Exception as exc:  # recorded, the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


@dataclass
class SweepResult:
    rows: list[dict]
    aggregate_csv: Path | None
    checks: list[dict]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks) and all(r["passed"] for r in self.rows)


def sweep(cfg: RunConfig, out_dir, workers: int | None = None) -> SweepResult:
    """Run the cartesian product of ``[sweep]`` axes, one subdirectory per cell.

    Cells run in a process pool sized by ``workers`` or the environment
    variable; failures are recorded in their row.  ``[aggregate]`` rules
    are then checked across cells.
    """
    cells = cfg.sweep_cells()
    if not cells:
        raise ConfigError("sweep needs at least one axis in [sweep]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, c, i, out / f"cell_{i:03d}") for i, c in enumerate(cells)]
    n = worker_count(workers)
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    path = out / "aggregate.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})
    return SweepResult(rows, path, check_aggregate(cfg, rows))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def check_aggregate(cfg: RunConfig, rows: list[dict]) -> list[dict]:
    """Cross-cell rules from ``[aggregate]``.

    ``decreasing`` / ``increasing``: strict monotonicity in cell order over
    finite values; ``cauchy``: successive differences shrink; ``order c tol``:
    observed refinement order log2 of successive difference ratios within tol
    of c; ``all <rule>`` / ``first <rule>`` / ``last <rule>``: a per-cell rule.
    """
    out = []
    for col, rule in cfg.section("aggregate").items():
        if col == "columns":
            continue
        vals = [r.get(col) for r in rows]
        parts = rule.split()
        op = parts[0].lower()
        detail = ""
        if op in ("decreasing", "increasing", "cauchy", "order"):
            xs = np.array([float(v) for v in vals if _finite(v)])
            d = np.diff(xs)
            if op == "decreasing":
                ok = xs.size >= 2 and bool(np.all(d < 0))
            elif op == "increasing":
                ok = xs.size >= 2 and bool(np.all(d > 0))
            else:
                ad = np.abs(d)
                ok = xs.size >= 3 and bool(np.all(ad[1:] < ad[:-1]))
                if op == "order" and xs.size >= 3:
                    orders = np.log2(ad[:-1] / ad[1:])
                    c, tol = float(parts[1]), float(parts[2])
                    ok = ok and bool(np.all(np.abs(orders - c) <= tol))
                    detail = "observed orders " + ", ".join(f"{o:.3f}" for o in orders)
                    if xs.size >= 2:
                        extrap = float(xs[-1] + (xs[-1] - xs[-2]) / (2.0**c - 1.0))
                        detail += f"; extrapolated {extrap!r}"
        elif op in ("all", "first", "last"):
            sub = " ".join(parts[1:])
            pick = vals if op == "all" else ([vals[0]] if op == "first" else [vals[-1]])
            ok = bool(pick) and all(evaluate_rule(_coerce(v), sub) for v in pick)
        else:
            raise ConfigError(f"unknown aggregate rule {rule!r}")
        out.append({"column": col, "rule": rule, "values": [_coerce(v) for v in vals], "passed": bool(ok),
                    "detail": detail})
    return out


def _finite(v) -> bool:
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


def _coerce(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, float, np.floating, np.integer)):
        return float(v)
    return v
