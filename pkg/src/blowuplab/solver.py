"""Method-of-lines integrator that follows solutions into the blowup regime.

The time stepper is explicit RK2 (midpoint) with a step size limited by both
diffusion and the reaction time scale 1/max(V f'(u)).  Snapshots are taken on
geometric growth of max u and on a regular time cadence, so resuming from any
stored snapshot reproduces the continuation bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .problem import ProblemSpec
from .zeroset import RegionMask


class SolverError(RuntimeError):
    pass


class StepOverflow(SolverError):
    """A step produced NaN, inf or a value past the saturation threshold."""

    def __init__(self, node: int, t: float, message: str = ""):
        self.node = int(node)
        self.t = float(t)
        super().__init__(message or f"non-finite or saturated value at node {node} (t={t:.17g})")


class PositivityViolation(SolverError):
    """u went below -1e-12, which signals an unstable step."""

    def __init__(self, node: int, t: float):
        self.node = int(node)
        self.t = float(t)
        super().__init__(f"u < -{K.NEGATIVE_SLACK:g} at node {node} (t={t:.17g}); step too large")


class TerminalStatus(str, Enum):
    BLOWUP = "BlowupDetected"
    HORIZON = "TimeHorizonReached"
    STEADY = "Steady"


@dataclass(frozen=True, eq=False)
class SolutionState:
    t: float
    u: np.ndarray
    dt_last: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def max_u(self) -> float:
        return float(self.u.max())

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.u))

    def reaction(self, spec: ProblemSpec) -> np.ndarray:
        return spec.V * spec.nonlinearity.f(self.u)

    def diffusion(self, spec: ProblemSpec) -> np.ndarray:
        return laplacian_apply(self.u, spec.domain)

    def rhs(self, spec: ProblemSpec) -> np.ndarray:
        """Discrete u_t; zero on Dirichlet nodes."""
        r = spec.rhs(self.u)
        r[spec.domain.stencil[3]] = 0.0
        return r


@dataclass(frozen=True)
class SolverConfig:
    """Solver tolerances and snapshot policy."""

    u_blow: float = 1e12
    dt_min_factor: float = 1e-30
    safety: float = 0.4
    horizon: float = 10.0
    snapshots_per_decade: int = 24
    time_frames: int = 200
    max_snapshots: int = 20000
    steady_tol: float = 1e-12
    max_steps: int = 200_000_000
    backend: str | None = None

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if not self.u_blow > 0 or not self.horizon > 0:
            raise ValueError("u_blow and horizon must be positive")
        if self.snapshots_per_decade < 1 or self.time_frames < 1:
            raise ValueError("snapshot cadence must be positive")

    @property
    def dt_min(self) -> float:
        return self.dt_min_factor * self.horizon

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Trajectory:
    x: np.ndarray
    snapshots: list[SolutionState]
    status: TerminalStatus
    events: list[tuple[float, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def max_values(self) -> np.ndarray:
        return np.array([s.max_u for s in self.snapshots])

    @property
    def dts(self) -> np.ndarray:
        return np.array([s.dt_last for s in self.snapshots])

    @property
    def argmax_x(self) -> np.ndarray:
        return np.array([self.x[s.argmax] for s in self.snapshots])

    @property
    def final(self) -> SolutionState:
        return self.snapshots[-1]

    def values(self) -> np.ndarray:
        """Snapshot-by-node array of u."""
        return np.stack([s.u for s in self.snapshots])

    def series_at(self, index: int) -> np.ndarray:
        return np.array([s.u[index] for s in self.snapshots])

    def truncated(self, k: int) -> "Trajectory":
        """Copy holding snapshots 0..k, as if the run had stopped there."""
        return Trajectory(self.x, self.snapshots[: k + 1], TerminalStatus.HORIZON,
                          [e for e in self.events if e[0] <= self.snapshots[k].t])

    # persistence ---------------------------------------------------------

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for old in d.glob("snap_*.csv"):
            old.unlink()
        with open(d / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "t", "max_u", "dt", "steps"])
            for i, s in enumerate(self.snapshots):
                w.writerow([i, repr(s.t), repr(s.max_u), repr(s.dt_last), s.step_count])
        for i, s in enumerate(self.snapshots):
            with open(d / f"snap_{i:05d}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "u"])
                for xv, uv in zip(self.x.tolist(), s.u.tolist()):
                    w.writerow([repr(xv), repr(uv)])
        meta = {"status": self.status.value, "events": [[t, m] for t, m in self.events],
                "snapshots": len(self.snapshots)}
        (d / "trajectory.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "Trajectory":
        d = Path(directory)
        if not (d / "index.csv").exists():
            raise FileNotFoundError(f"no trajectory index in {d}")
        with open(d / "index.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        snaps, x = [], None
        for r in rows:
            with open(d / f"snap_{int(r['id']):05d}.csv", newline="") as fh:
                data = list(csv.reader(fh))[1:]
            xs = np.array([float(a) for a, _ in data])
            u = np.array([float(b) for _, b in data])
            x = xs if x is None else x
            snaps.append(SolutionState(float(r["t"]), u, float(r["dt"]), int(r["steps"])))
        meta = json.loads((d / "trajectory.json").read_text()) if (d / "trajectory.json").exists() else {}
        status = TerminalStatus(meta.get("status", TerminalStatus.HORIZON.value))
        events = [(float(t), str(m)) for t, m in meta.get("events", [])]
        x = np.array(x)
        x.setflags(write=False)
        return cls(x, snaps, status, events)


@dataclass(frozen=True)
class BlowupEstimate:
    T_hat: float
    uncertainty: float
    r_squared: float
    fit_degenerate: bool
    window: tuple[int, int]


@dataclass(frozen=True, eq=False)
class BlowupReport:
    status: TerminalStatus
    T_hat: float
    T_hat_uncertainty: float
    fit_degenerate: bool
    fit_r_squared: float
    blowup_set_mask: RegionMask
    max_location_series: np.ndarray  # (t, argmax x)
    max_value_series: np.ndarray  # (t, max u)
    steps: int
    wall_time: float

    def as_dict(self, x=None) -> dict:
        d = {
            "status": self.status.value,
            "T_hat": self.T_hat,
            "T_hat_uncertainty": self.T_hat_uncertainty,
            "fit_degenerate": self.fit_degenerate,
            "fit_r_squared": self.fit_r_squared,
            "blowup_set_nodes": self.blowup_set_mask.count,
            "steps": self.steps,
        }
        if x is not None and self.blowup_set_mask:
            xs = np.asarray(x)[self.blowup_set_mask.mask]
            d["blowup_set_extent"] = [float(xs.min()), float(xs.max())]
        return d


# --------------------------------------------------------------------------
# single-step primitives
# --------------------------------------------------------------------------

def laplacian_apply(u, domain) -> np.ndarray:
    """Discrete Laplacian on every node; Dirichlet rows are zero."""
    cm, cc, cp, _ = domain.stencil
    return K.laplacian(np.ascontiguousarray(u, dtype=float), cm, cc, cp)


def diffusion_limit(domain) -> float:
    return domain.spacing**2 / (2.0 * domain.dim_factor)


def adaptive_dt(state: SolutionState, spec: ProblemSpec, safety: float = 0.4) -> float:
    """safety * min(dx^2 / (2 dim_factor), 1 / max(V f'(u)))."""
    f = spec.nonlinearity
    rate = max(K.max_rate(np.ascontiguousarray(state.u), np.ascontiguousarray(spec.V), f.code, f.param), K.RATE_FLOOR)
    return safety * min(diffusion_limit(spec.domain), 1.0 / rate)


def advance(state: SolutionState, spec: ProblemSpec, dt: float, backend: str | None = None) -> SolutionState:
    """One RK2 midpoint step; Dirichlet nodes are reset to 0 after each stage."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cm, cc, cp, fixed = spec.domain.stencil
    f = spec.nonlinearity
    new, bad = K.rk2_step(np.ascontiguousarray(state.u), np.ascontiguousarray(spec.V), cm, cc, cp, fixed,
                          f.code, f.param, dt, backend=backend)
    if bad >= 0:
        raise StepOverflow(bad, state.t + dt)
    if bad < -1:
        raise PositivityViolation(-2 - bad, state.t + dt)
    return SolutionState(state.t + dt, new, dt, state.step_count + 1)


# --------------------------------------------------------------------------
# blowup time estimation
# --------------------------------------------------------------------------

def power_linearizer(alpha: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda m: np.asarray(m, dtype=float) ** (-1.0 / alpha)


def linearizer_for(spec: ProblemSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Transform g(max u) that is asymptotically linear in T - t for the ODE u' = V f(u)."""
    f = spec.nonlinearity
    if f.power_like:
        return power_linearizer(1.0 / (f.param - 1.0))
    if f.kind == "exponential":
        return lambda m: np.exp(-np.asarray(m, dtype=float))
    a = f.param
    return lambda m: np.log(np.asarray(m, dtype=float)) ** (1.0 - a)


def _line_fit(t: np.ndarray, y: np.ndarray):
    tm, ym = t.mean(), y.mean()
    dt, dy = t - tm, y - ym
    stt = float(dt @ dt)
    if stt == 0:
        return None
    b = float(dt @ dy) / stt
    a = ym - b * tm
    res = y - (a + b * t)
    syy = float(dy @ dy)
    r2 = 1.0 - float(res @ res) / syy if syy > 0 else 1.0
    return a, b, res, r2, tm, stt


TIME_RESOLUTION = 1e-9


def resolvable(times, t_end: float, rel: float = TIME_RESOLUTION) -> np.ndarray:
    """Snapshots whose distance to ``t_end`` is well above the rounding of t."""
    times = np.asarray(times, dtype=float)
    return (t_end - times) >= rel * max(abs(t_end), 1e-300)


def estimate_blowup_time(trajectory: Trajectory, alpha: float | None = None,
                         linearizer: Callable | None = None, min_points: int = 20) -> BlowupEstimate:
    """Fit g(max u) linearly against t over the terminal decade and take the root.

    The terminal decade is taken among snapshots with t_end - t above
    ``TIME_RESOLUTION`` relative to t_end, since closer frames carry no usable
    time information in double precision.

    ``g`` defaults to (max u)^(-1/alpha), the type-I linearisation.  When the
    fit degenerates (R^2 < 0.99, too few points or a non-negative slope) the
    estimate falls back to the last time plus the last step.
    """
    if linearizer is None:
        if alpha is None:
            raise ValueError("need alpha or a linearizer")
        linearizer = power_linearizer(alpha)
    t_all, m_all = trajectory.times, trajectory.max_values
    last = trajectory.final
    fallback = BlowupEstimate(last.t + last.dt_last, last.dt_last, 0.0, True, (len(t_all) - 1, len(t_all) - 1))
    if len(t_all) < 3 or not m_all[-1] > 0:
        return fallback
    # beyond this point T - t is lost in the rounding of t itself
    end = int(np.flatnonzero(resolvable(t_all, last.t))[-1]) + 1 if resolvable(t_all, last.t).any() else 0
    end = max(end, min(len(t_all), 3))
    top = m_all[end - 1]
    below = np.flatnonzero(m_all[:end] < top / 10.0)
    start = int(below[-1]) + 1 if below.size else 0
    sel = np.arange(start, end)
    if sel.size < min_points:
        sel = np.arange(max(0, end - min_points), end)
    sel = sel[m_all[sel] > 0]
    if sel.size < 3:
        return fallback
    t = t_all[sel]
    with np.errstate(all="ignore"):
        y = linearizer(m_all[sel])
    if not np.all(np.isfinite(y)):
        return fallback
    fit = _line_fit(t, y)
    if fit is None:
        return fallback
    a, b, res, r2, tm, stt = fit
    window = (int(sel[0]), int(sel[-1]))
    if not b < 0:
        return replace(fallback, r_squared=r2, window=window)
    T = -a / b
    # delta-method error of the root, plus the residual scale mapped to time
    n = t.size
    s2 = float(res @ res) / max(n - 2, 1)
    var_a = s2 * (1.0 / n + tm * tm / stt)
    var_b = s2 / stt
    cov_ab = -s2 * tm / stt
    var_T = (var_a + T * T * var_b + 2 * T * cov_ab) / (b * b)
    unc = math.sqrt(max(var_T, 0.0)) + float(np.max(np.abs(res))) / abs(b)
    degenerate = r2 < 0.99
    if degenerate:
        return replace(fallback, r_squared=r2, window=window)
    return BlowupEstimate(max(T, last.t), unc, r2, False, window)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def blowup_set(u_final: np.ndarray, exponent: float = 0.5) -> np.ndarray:
    """Nodes where u_final >= (max u_final)^exponent."""
    top = float(np.max(u_final))
    if not top > 1:
        return np.zeros(u_final.shape, dtype=bool)
    return u_final >= top**exponent


def _free_rhs_is_zero(spec: ProblemSpec, u: np.ndarray) -> bool:
    r = spec.rhs(u)
    r[spec.domain.stencil[3]] = 0.0
    return bool(np.all(r == 0.0))


def run_to_blowup(spec: ProblemSpec, config: SolverConfig | None = None, *,
                  resume: Trajectory | None = None, resume_index: int | None = None,
                  persist_dir=None, blowup_set_exponent: float = 0.5) -> tuple[Trajectory, BlowupReport]:
    """Integrate until blowup, steady state or the time horizon.

    Parameters
    ----------
    spec : ProblemSpec
    config : SolverConfig, optional
    resume, resume_index
        Continue from snapshot ``resume_index`` (default: last) of a stored
        trajectory.  Snapshots after that index are discarded and recomputed.
    persist_dir : path, optional
        Directory that receives the trajectory CSVs.
    """
    cfg = config or SolverConfig()
    f = spec.nonlinearity
    cm, cc, cp, fixed = spec.domain.stencil
    V = np.ascontiguousarray(spec.V)
    u_blow = min(cfg.u_blow, f.saturation)
    ratio = 10.0 ** (1.0 / cfg.snapshots_per_decade)
    frame = cfg.horizon / cfg.time_frames
    dt_diff = diffusion_limit(spec.domain)
    wall0 = time.perf_counter()

    if resume is not None:
        k = len(resume) - 1 if resume_index is None else int(resume_index)
        snaps = list(resume.snapshots[: k + 1])
        events = [e for e in resume.events if e[0] <= snaps[-1].t]
        events.append((snaps[-1].t, f"resumed from snapshot {k}"))
    else:
        snaps = [SolutionState(0.0, spec.initial_data, 0.0, 0)]
        events = []

    u = np.array(snaps[-1].u, dtype=float)
    t = snaps[-1].t
    steps = snaps[-1].step_count
    status = None

    if resume is None and _free_rhs_is_zero(spec, u):
        status = TerminalStatus.STEADY
        events.append((0.0, "initial data is an exact discrete steady state"))

    while status is None:
        last = snaps[-1]
        level = last.max_u * ratio if last.max_u > 0 else 1e-300
        t_target = last.t + frame
        budget = cfg.max_steps - steps
        if budget <= 0:
            status = TerminalStatus.HORIZON
            events.append((t, "step budget exhausted"))
            break
        t, n, dt, code, bad = K.run_chunk(u, V, cm, cc, cp, fixed, f.code, f.param, t, dt_diff, cfg.safety,
                                          level, t_target, cfg.horizon, u_blow, cfg.dt_min,
                                          min(budget, 10_000_000), backend=cfg.backend)
        steps += n
        if code == K.STATUS_BUDGET:
            continue
        if code == K.STATUS_NEGATIVE:
            raise PositivityViolation(bad, t)
        state = SolutionState(t, u, dt, steps)
        if code == K.STATUS_OVERFLOW:
            events.append((t, f"saturation at node {bad} before u_blow; treated as blowup"))
            status = TerminalStatus.BLOWUP
            break
        if code == K.STATUS_DT_MIN:
            events.append((t, f"dt {dt:.3g} fell below dt_min"))
            snaps.append(state)
            status = TerminalStatus.BLOWUP
            break
        snaps.append(state)
        if code == K.STATUS_BLOWUP:
            events.append((t, f"max u {state.max_u:.6g} reached u_blow"))
            status = TerminalStatus.BLOWUP
        elif code == K.STATUS_HORIZON:
            events.append((t, "time horizon reached"))
            status = TerminalStatus.HORIZON
        else:
            scale = max(state.max_u, 1e-300)
            change = float(np.max(np.abs(state.u - last.u))) / scale
            if change < cfg.steady_tol:
                events.append((t, f"relative change {change:.3g} below steady tolerance"))
                status = TerminalStatus.STEADY
        if len(snaps) > cfg.max_snapshots:
            snaps = _thin(snaps)
            events.append((t, "snapshot list thinned"))

    traj = Trajectory(spec.domain.nodes, snaps, status, events)
    report = summarize_trajectory(traj, spec, steps, time.perf_counter() - wall0, blowup_set_exponent)
    if persist_dir is not None:
        traj.save(persist_dir)
    return traj, report


def summarize_trajectory(traj: Trajectory, spec: ProblemSpec, steps: int | None = None,
                         wall_time: float = 0.0, blowup_set_exponent: float = 0.5) -> BlowupReport:
    """Blowup report of a finished trajectory; depends only on the stored frames."""
    if traj.status is TerminalStatus.BLOWUP:
        est = estimate_blowup_time(traj, linearizer=linearizer_for(spec))
        mask = RegionMask(blowup_set(traj.final.u, blowup_set_exponent))
    else:
        est = BlowupEstimate(math.inf, math.inf, 0.0, True, (0, 0))
        mask = RegionMask.empty(traj.x.shape)
    return BlowupReport(
        status=traj.status,
        T_hat=est.T_hat,
        T_hat_uncertainty=est.uncertainty,
        fit_degenerate=est.fit_degenerate,
        fit_r_squared=est.r_squared,
        blowup_set_mask=mask,
        max_location_series=np.column_stack([traj.times, traj.argmax_x]),
        max_value_series=np.column_stack([traj.times, traj.max_values]),
        steps=traj.final.step_count if steps is None else steps,
        wall_time=wall_time,
    )


def _thin(snaps: list[SolutionState]) -> list[SolutionState]:
    """Drop every other snapshot in the older half; the recent half stays dense."""
    half = len(snaps) // 2
    return snaps[:half:2] + snaps[half:]
