"""Quantities the blowup theory constrains, measured on computed trajectories.

Time derivatives are always rebuilt from the spatial right-hand side of a
snapshot, never by differencing snapshots in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .problem import ProblemSpec
from .solver import SolutionState, TerminalStatus, Trajectory, blowup_set, resolvable
from .zeroset import RegionMask

K_FLOOR = 1e6
EXCLUDE_FRACTION = 0.02


class InsufficientData(ValueError):
    pass


class MaskTouchesBoundary(ValueError):
    pass


class MaskWhereVVanishes(ValueError):
    pass


class NotABlowupPoint(ValueError):
    pass


def _regress(X: np.ndarray, Y: np.ndarray) -> tuple[float, float, float]:
    """Least squares Y = c0 + c1 X; returns (c0, c1, r^2)."""
    Xm, Ym = X.mean(), Y.mean()
    dX, dY = X - Xm, Y - Ym
    sxx = float(dX @ dX)
    if sxx == 0:
        raise InsufficientData("regression abscissae are all equal")
    c1 = float(dX @ dY) / sxx
    c0 = Ym - c1 * Xm
    res = Y - (c0 + c1 * X)
    syy = float(dY @ dY)
    r2 = 1.0 - float(res @ res) / syy if syy > 0 else 1.0
    return c0, c1, min(max(r2, 0.0), 1.0)


def _trim_log_range(tau: np.ndarray, fraction: float) -> np.ndarray:
    """Drop the frames closest to T, i.e. the bottom ``fraction`` of the log(T-t) range."""
    lt = np.log(tau)
    cut = lt.min() + fraction * (lt.max() - lt.min())
    return lt >= cut


# --------------------------------------------------------------------------
# type-I rate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    exponent_hat: float
    amplitude_hat: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    @property
    def type_one(self) -> bool:
        return self.r_squared >= 0.99

    def as_dict(self) -> dict:
        return {"exponent_hat": self.exponent_hat, "amplitude_hat": self.amplitude_hat,
                "r_squared": self.r_squared, "window": list(self.window), "n_points": self.n_points,
                "type_one": self.type_one}


def fit_type_one_rate(trajectory: Trajectory, T_hat: float, u_range=(1e3, 1e10),
                      min_points: int = 20, exclude_fraction: float = EXCLUDE_FRACTION) -> RateFit:
    """Regress log(max u) on log(T_hat - t).

    The exponent estimates alpha and the amplitude estimates M in
    u <= M (T - t)^(-alpha).  Frames with max u outside ``u_range``, frames
    whose distance to T_hat is below time resolution, and the bottom 2% of the
    log(T_hat - t) range are left out.
    """
    if trajectory.status is not TerminalStatus.BLOWUP:
        raise InsufficientData("rate fit needs a trajectory that ended in blowup")
    t, m = trajectory.times, trajectory.max_values
    keep = (m >= u_range[0]) & (m <= u_range[1]) & resolvable(t, T_hat)
    if keep.sum() < min_points:
        raise InsufficientData(f"{int(keep.sum())} frames in the fit range, need {min_points}")
    t, m = t[keep], m[keep]
    tau = T_hat - t
    sub = _trim_log_range(tau, exclude_fraction)
    t, m, tau = t[sub], m[sub], tau[sub]
    c0, c1, r2 = _regress(np.log(tau), np.log(m))
    return RateFit(-c1, math.exp(c0), r2, (float(t[0]), float(t[-1])), int(t.size))


# --------------------------------------------------------------------------
# ODE deviation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeviationSeries:
    times: np.ndarray
    max_u: np.ndarray
    ratio: np.ndarray  # nan where no mask node passes the u threshold
    u_threshold: float
    K_floor: float

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.ratio)

    @property
    def running_max(self) -> np.ndarray:
        """sup of the ratio over all later frames: the smallest eps valid from t on."""
        r = np.where(self.defined, self.ratio, -np.inf)
        tail = np.maximum.accumulate(r[::-1])[::-1]
        return np.where(np.isfinite(tail), tail, np.nan)

    @property
    def terminal(self) -> float:
        d = np.flatnonzero(self.defined)
        return float(self.ratio[d[-1]]) if d.size else math.nan

    def falls_below(self, level: float) -> bool:
        rm = self.running_max
        return bool(np.any(rm[self.defined] < level))

    def nonincreasing_over(self, decades: float, series: str = "running_max") -> bool:
        """Check monotonicity over the frames in the last ``decades`` of max u growth."""
        d = self.defined
        if not d.any():
            return False
        top = self.max_u[d].max()
        sel = d & (self.max_u >= top / 10.0**decades)
        y = (self.running_max if series == "running_max" else self.ratio)[sel]
        return bool(np.all(np.diff(y) <= 0))

    def as_dict(self) -> dict:
        return {"terminal_ratio": self.terminal, "min_running_max": float(np.nanmin(self.running_max))
                if self.defined.any() else None, "u_threshold": self.u_threshold, "K_floor": self.K_floor,
                "frames": int(self.defined.sum())}


def _check_mask(spec: ProblemSpec, mask: RegionMask, margin: int = 3) -> None:
    if mask.mask.shape != (spec.domain.grid_points,):
        raise ValueError("mask shape does not match the grid")
    if not mask:
        raise ValueError("mask is empty")
    idx = mask.indices
    bnd = spec.domain.boundary_nodes
    if np.min(np.abs(idx[:, None] - bnd[None, :])) < margin:
        raise MaskTouchesBoundary(f"mask comes within {margin} nodes of the boundary")
    grown = ndimage.binary_dilation(mask.mask, iterations=margin)
    if not np.all(spec.V[grown] > 0):
        raise MaskWhereVVanishes("V vanishes on a neighbourhood of the mask")


def _power_scale(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    f = spec.nonlinearity
    return u**f.param if f.power_like else f.f(u)


def ode_deviation(trajectory: Trajectory, spec: ProblemSpec, mask: RegionMask,
                  u_threshold: float = 1e4, K_floor: float = K_FLOOR) -> DeviationSeries:
    """sup over the mask of |u_t - V f(u)| / (u^p + K_floor) at nodes with u >= u_threshold.

    Raises
    ------
    MaskTouchesBoundary
        The mask is within 3 nodes of the boundary.
    MaskWhereVVanishes
        V is not bounded below by a positive constant near the mask.
    """
    _check_mask(spec, mask)
    times, mx, out = [], [], []
    m = mask.mask
    for s in trajectory.snapshots:
        u = s.u
        sel = m & (u >= u_threshold)
        times.append(s.t)
        mx.append(s.max_u)
        if not sel.any():
            out.append(math.nan)
            continue
        ut = spec.rhs(u)[sel]
        reaction = spec.V[sel] * spec.nonlinearity.f(u[sel])
        out.append(float(np.max(np.abs(ut - reaction) / (_power_scale(spec, u[sel]) + K_floor))))
    return DeviationSeries(np.array(times), np.array(mx), np.array(out), float(u_threshold), float(K_floor))


# --------------------------------------------------------------------------
# Friedman-McLeod functional
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JField:
    J: np.ndarray
    min_J: float


def friedman_mcleod_J(state: SolutionState, spec: ProblemSpec, epsilon: float,
                      mask: RegionMask | None = None) -> JField:
    """J = u_t - eps f(u), with u_t rebuilt from the discrete right-hand side.

    The minimum is taken over free (non-Dirichlet) nodes, or over ``mask``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    J = state.rhs(spec) - epsilon * spec.nonlinearity.f(state.u)
    fixed = spec.domain.stencil[3]
    J[fixed] = 0.0
    region = ~fixed if mask is None else mask.mask
    return JField(J, float(J[region].min()))


@dataclass(frozen=True, eq=False)
class MonotoneCertificate:
    holds: bool
    epsilon: float
    t1: float  # earliest frame time from which min J >= 0 at every later frame
    min_J: np.ndarray
    times: np.ndarray

    def as_dict(self) -> dict:
        return {"holds": self.holds, "epsilon": self.epsilon, "t1": self.t1,
                "final_min_J": float(self.min_J[-1])}


def monotone_certificate(trajectory: Trajectory, spec: ProblemSpec, epsilon: float,
                         mask: RegionMask | None = None, t1: float | None = None) -> MonotoneCertificate:
    """Check min J >= 0 on ``mask`` for every frame from ``t1`` on.

    Without ``t1`` the earliest admissible start is reported; the certificate
    holds when that start lies before the final frame.
    """
    times = trajectory.times
    mins = np.array([friedman_mcleod_J(s, spec, epsilon, mask).min_J for s in trajectory.snapshots])
    ok = mins >= 0
    if t1 is not None:
        sel = times >= t1
        return MonotoneCertificate(bool(sel.any() and ok[sel].all()), epsilon, float(t1), mins, times)
    bad = np.flatnonzero(~ok)
    start = 0 if bad.size == 0 else int(bad[-1]) + 1
    if start >= len(times) - 1:
        return MonotoneCertificate(False, epsilon, math.inf, mins, times)
    return MonotoneCertificate(True, epsilon, float(times[start]), mins, times)


def monotone_in_time(trajectory: Trajectory, slack: float = 1e-10) -> tuple[bool, float]:
    """u nondecreasing in t at every node, up to ``slack`` times max u.

    Returns the verdict and the worst relative decrease.
    """
    worst = 0.0
    for a, b in zip(trajectory.snapshots[:-1], trajectory.snapshots[1:]):
        drop = float(np.max(a.u - b.u)) / max(b.max_u, 1e-300)
        worst = max(worst, drop)
    return worst <= slack, worst


# --------------------------------------------------------------------------
# Kaplan functional, symmetry, nondegeneracy
# --------------------------------------------------------------------------

def kaplan_functional(u, x, ell: float) -> float:
    """Trapezoid quadrature of u cos(pi x / 2 ell) over [-ell, ell]."""
    u, x = np.asarray(u, dtype=float), np.asarray(x, dtype=float)
    if not ell > 0:
        raise ValueError("ell must be positive")
    half = min(-x[0], x[-1])
    if ell > half * (1 + 1e-12):
        raise ValueError(f"ell = {ell} exceeds the domain half-width {half}")
    inside = (x > -ell) & (x < ell)
    xs = np.concatenate([[-ell], x[inside], [ell]])
    ys = np.concatenate([[0.0], u[inside] * np.cos(np.pi * x[inside] / (2 * ell)), [0.0]])
    return float(np.trapezoid(ys, xs))


@dataclass(frozen=True)
class SymmetryReport:
    even_defect: float
    ux_max_on_0L: float
    max_at_origin: bool
    proven_regime: bool
    scale: float

    def holds(self, tol: float = 1e-8) -> bool:
        s = max(self.scale, 1e-300)
        return self.even_defect <= tol * s and self.ux_max_on_0L <= tol * s and self.max_at_origin


def symmetry_monotonicity_check(u, x, L: float = 1.0 / 3.0) -> SymmetryReport:
    """Evenness, u_x <= 0 on [0, L] and location of the maximum.

    ``scale`` is max u, the natural unit for the defects.  ``proven_regime``
    is false for L < 1/3, where reflection monotonicity is not guaranteed.
    """
    u, x = np.asarray(u, dtype=float), np.asarray(x, dtype=float)
    if not np.allclose(x, -x[::-1], atol=1e-12 * max(abs(x[0]), 1.0)):
        raise ValueError("grid is not symmetric about 0")
    even = float(np.max(np.abs(u - u[::-1])))
    ux = np.gradient(u, x)
    sel = (x >= -1e-12) & (x <= L + 1e-12)
    ux_max = float(ux[sel].max()) if sel.any() else 0.0
    h = float(np.min(np.diff(x)))
    at_origin = abs(float(x[np.argmax(u)])) <= h * (1 + 1e-9)
    return SymmetryReport(even, ux_max, at_origin, L >= 1.0 / 3.0,
                          float(np.max(np.abs(u))))


@dataclass(frozen=True)
class NondegeneracyResult:
    liminf_hat: float
    threshold: float
    satisfied: bool
    window: tuple[float, float]
    slack: float

    @property
    def ratio(self) -> float:
        return self.liminf_hat / self.threshold

    def as_dict(self) -> dict:
        return {"liminf_hat": self.liminf_hat, "threshold": self.threshold, "ratio": self.ratio,
                "satisfied": self.satisfied, "window": list(self.window), "slack": self.slack}


def nondegeneracy_check(trajectory: Trajectory, x0: int, A: float, alpha: float, kappa: float,
                        T_hat: float, slack: float = 0.9, decades: float = 1.0) -> NondegeneracyResult:
    """min of (T_hat - t)^alpha u(t, x0) over the final decade of log(T_hat - t).

    Frames closer to T_hat than the time resolution are skipped.  The result
    is ``satisfied`` when the liminf estimate is at least ``slack`` times the
    threshold kappa A^(-alpha).

    Raises
    ------
    NotABlowupPoint
        ``x0`` is outside the blowup set of the final frame.
    """
    if trajectory.status is not TerminalStatus.BLOWUP:
        raise NotABlowupPoint("trajectory did not blow up")
    if not blowup_set(trajectory.final.u)[x0]:
        raise NotABlowupPoint(f"node {x0} is not in the blowup set")
    t = trajectory.times
    ok = resolvable(t, T_hat) & (t < T_hat)
    if ok.sum() < 2:
        raise InsufficientData("no resolvable frames before T_hat")
    tau = T_hat - t[ok]
    sel = tau <= tau.min() * 10.0**decades
    vals = tau[sel] ** alpha * trajectory.series_at(x0)[ok][sel]
    thr = kappa * A ** (-alpha)
    liminf = float(vals.min())
    tw = t[ok][sel]
    return NondegeneracyResult(liminf, thr, liminf >= slack * thr, (float(tw[0]), float(tw[-1])), slack)


# --------------------------------------------------------------------------
# weak nonlinearity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WeakRateFit:
    slope_hat: float
    predicted: float
    r_squared: float
    C1: float
    C2: float
    sandwich_holds: bool
    window: tuple[float, float]
    n_points: int

    @property
    def relative_error(self) -> float:
        return abs(self.slope_hat - self.predicted) / self.predicted

    def as_dict(self) -> dict:
        return {"slope_hat": self.slope_hat, "predicted": self.predicted, "relative_error": self.relative_error,
                "r_squared": self.r_squared, "C1": self.C1, "C2": self.C2, "sandwich_holds": self.sandwich_holds,
                "window": list(self.window), "n_points": self.n_points}


def weak_rate_fit(trajectory: Trajectory, T_hat: float, a: float, center: int | None = None,
                  min_points: int = 10, exclude_fraction: float = EXCLUDE_FRACTION) -> WeakRateFit:
    """Double-log rate for u log(1+u)^a on (-1, 1).

    Regresses log log u(t, 0) on -log(T_hat - t) over t in (T_hat/2, T_hat);
    the prediction is 1/(a-1).  C2 is the smallest constant with
    u(t,0) <= exp(C2 tau^-b) on the window; C1 is the largest constant
    (found by bisection, capped at C2) with
    C1 (1-|x|) exp(C1 tau^-b) <= u(t,x) at every interior node.
    """
    if not 1 < a < 2:
        raise ValueError("need 1 < a < 2")
    b = 1.0 / (a - 1.0)
    x = trajectory.x
    if center is None:
        center = int(np.argmin(np.abs(x)))
    t = trajectory.times
    uc = trajectory.series_at(center)
    ok = resolvable(t, T_hat) & (t < T_hat) & (t > T_hat / 2) & (uc > math.e)
    if ok.sum() < min_points:
        raise InsufficientData(f"{int(ok.sum())} usable frames, need {min_points}")
    idx = np.flatnonzero(ok)
    tau = T_hat - t[idx]
    sub = _trim_log_range(tau, exclude_fraction)
    idx, tau = idx[sub], tau[sub]
    logu = np.log(uc[idx])
    c0, c1, r2 = _regress(-np.log(tau), np.log(logu))
    C2 = float(np.max(logu * tau**b))

    interior = slice(1, len(x) - 1)
    dist = 1.0 - np.abs(x[interior])
    U = np.stack([trajectory.snapshots[i].u[interior] for i in idx])
    with np.errstate(divide="ignore"):
        logU = np.log(U)
    g = tau[:, None] ** (-b)

    def lower_ok(C: float) -> bool:
        return bool(np.all(math.log(C) + np.log(dist)[None, :] + C * g <= logU))

    lo, hi = 0.0, C2
    if lower_ok(hi):
        C1 = hi
    else:
        lo = hi * 1e-12
        if not lower_ok(lo):
            C1 = 0.0
        else:
            for _ in range(60):
                mid = math.sqrt(lo * hi)
                lo, hi = (mid, hi) if lower_ok(mid) else (lo, mid)
            C1 = lo
    upper = bool(np.all(U <= uc[idx][:, None] * (1 + 1e-12)))
    holds = C1 > 0 and C1 <= C2 and upper
    return WeakRateFit(c1, b, r2, C1, C2, holds, (float(t[idx[0]]), float(t[idx[-1]])), int(idx.size))
