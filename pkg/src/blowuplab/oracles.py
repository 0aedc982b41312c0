"""Closed-form and brute-force reference objects.

Exact ODE blowup, the zero-point supersolution, the smooth cutoff, the
comparison-function threshold, self-similar rescaling and the Dirichlet heat
kernel of (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .problem import Nonlinearity, critical_exponents
from .solver import Trajectory

# --------------------------------------------------------------------------
# exact ODE blowup
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ODEBlowup:
    u0: float
    p: float
    A: float

    @property
    def alpha(self) -> float:
        return 1.0 / (self.p - 1.0)

    @property
    def T(self) -> float:
        return self.u0 ** (1.0 - self.p) / ((self.p - 1.0) * self.A)

    @property
    def amplitude(self) -> float:
        """(T - t)^alpha u(t), constant along the solution and equal to kappa A^-alpha."""
        return ((self.p - 1.0) * self.A) ** (-self.alpha)

    def u(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return ((self.p - 1.0) * self.A * (self.T - t)) ** (-self.alpha)


def exact_ode_blowup(u0: float, p: float, A: float) -> ODEBlowup:
    """Solution of u' = A u^p, u(0) = u0."""
    if not (u0 > 0 and p > 1 and A > 0):
        raise ValueError("need u0 > 0, p > 1 and A > 0")
    return ODEBlowup(float(u0), float(p), float(A))


# --------------------------------------------------------------------------
# supersolution near a zero of V
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Supersolution:
    """w(t, x) = K / [q(x) + (T - t)]^alpha with q = beta cos^2(pi |x - x0| / 2r)."""

    K: float
    beta: float
    r: float
    x0: float
    T: float
    alpha: float
    n: int = 1

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not (self.K > 0 and self.r > 0 and self.alpha > 0):
            raise ValueError("K, r and alpha must be positive")

    def _theta(self, x):
        return np.pi * np.abs(np.asarray(x, dtype=float) - self.x0) / (2 * self.r)

    def q(self, x):
        return self.beta * np.cos(self._theta(x)) ** 2

    def grad_sq_over_q(self, x):
        """|grad q|^2 / q in closed form (finite where q vanishes)."""
        k = np.pi / (2 * self.r)
        return 4 * self.beta * k * k * np.sin(self._theta(x)) ** 2

    def grad_sq(self, x):
        k = np.pi / (2 * self.r)
        return (self.beta * k * np.sin(2 * self._theta(x))) ** 2

    def lap_q(self, x):
        k = np.pi / (2 * self.r)
        th = self._theta(x)
        qss = -2 * self.beta * k * k * np.cos(2 * th)
        if self.n == 1:
            return qss
        s = np.abs(np.asarray(x, dtype=float) - self.x0)
        with np.errstate(divide="ignore", invalid="ignore"):
            drift = np.where(s > 0, -self.beta * k * np.sin(2 * th) / np.where(s > 0, s, 1.0), -2 * self.beta * k * k)
        return qss + (self.n - 1) * drift

    def w(self, t, x):
        return self.K / (self.q(x) + (self.T - np.asarray(t, dtype=float))) ** self.alpha

    def as_dict(self) -> dict:
        return {"K": self.K, "beta": self.beta, "r": self.r, "x0": self.x0, "T": self.T, "alpha": self.alpha}


@dataclass(frozen=True)
class SupersolutionResidual:
    min_residual: float
    condition_4_3_min: float


def _potential_values(V, x) -> np.ndarray:
    return np.asarray(V(np.asarray(x, dtype=float)), dtype=float)


def condition_4_3(s: Supersolution, V, C: float, p: float, x) -> np.ndarray:
    """1 + Lap q - (alpha+1)|grad q|^2/q - (2C/alpha) K^(p-1) V on the points ``x``."""
    return (1 + s.lap_q(x) - (s.alpha + 1) * s.grad_sq_over_q(x)
            - (2 * C / s.alpha) * s.K ** (p - 1) * _potential_values(V, x))


def supersolution_residual(s: Supersolution, V, C: float, p: float, grid,
                           taus=None) -> SupersolutionResidual:
    """PDE residual w_t - Lap w - C V (1+w)^p and the sufficient condition.

    The PDE residual is evaluated in closed form on ``grid`` for each
    T - t in ``taus`` (default: 49 log-spaced values in [1e-12, T]).

    Raises
    ------
    ValueError
        A grid point lies outside the closed ball B(x0, r).
    """
    x = np.asarray(grid, dtype=float)
    if np.any(np.abs(x - s.x0) > s.r * (1 + 1e-12)):
        raise ValueError("grid point outside B(x0, r)")
    if taus is None:
        taus = np.logspace(-12, math.log10(max(s.T, 1e-12)), 49)
    Vx = _potential_values(V, x)
    q, g2, lq = s.q(x), s.grad_sq(x), s.lap_q(x)
    worst = math.inf
    a, K = s.alpha, s.K
    for tau in np.asarray(taus, dtype=float):
        g = q + tau
        w = K * g ** (-a)
        res = a * K * g ** (-a - 1) * (1 + lq - (a + 1) * g2 / g) - C * Vx * (1 + w) ** p
        worst = min(worst, float(res.min()))
    return SupersolutionResidual(worst, float(condition_4_3(s, V, C, p, x).min()))


def _bisect_geometric(pred: Callable[[float], bool], lo: float, hi: float, steps: int = 40,
                      want: str = "largest") -> float:
    """Geometric bisection on a monotone predicate over [lo, hi].

    ``want='largest'``: pred true at lo, returns the largest true point found.
    ``want='smallest'``: pred true at hi, returns the smallest true point found.
    """
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if want == "largest":
            lo, hi = (mid, hi) if pred(mid) else (lo, mid)
        else:
            lo, hi = (lo, mid) if pred(mid) else (mid, hi)
    return lo if want == "largest" else hi


@dataclass(frozen=True)
class SupersolutionSearch:
    supersolution: Supersolution
    M: float
    condition_min: float
    residual_min: float
    rho: float

    def as_dict(self) -> dict:
        d = self.supersolution.as_dict()
        d.update({"M": self.M, "condition_4_3_min": self.condition_min, "residual_min": self.residual_min,
                  "rho": self.rho})
        return d


def find_supersolution(M: float, V, C: float, p: float, x0: float, rho: float, T: float,
                       u0_max: float = 0.0, n: int = 1, grid_points: int = 10_000,
                       steps: int = 40) -> SupersolutionSearch:
    """Pick K, then r, then beta, each by geometric bisection.

    K is the smallest value above M that dominates the initial data and keeps
    (q + T - t)^alpha <= (2^(1/p) - 1) K, which is what makes
    f(w) (q + T - t)^(alpha+1) <= 2 C K^p.  r is the largest radius below
    rho/2 with (2C/alpha) K^(p-1) V < 1/3 on B(x0, r).  beta is the largest
    value in (0, 1) for which the sufficient condition stays positive; half
    of it is used so that the condition holds with a margin.
    """
    alpha = 1.0 / (p - 1.0)
    margin = 2.0 ** (1.0 / p) - 1.0

    def k_ok(K: float) -> bool:
        return K > M and K >= u0_max * (1.0 + T) ** alpha and (1.0 + T) ** alpha <= margin * K

    hi = max(M, u0_max, 1.0) * 2.0
    while not k_ok(hi):
        hi *= 2.0
    K = _bisect_geometric(k_ok, max(M, 1e-300), hi, steps, want="smallest")

    def ball(r: float) -> np.ndarray:
        return x0 + np.linspace(-r, r, grid_points)

    coef = (2 * C / alpha) * K ** (p - 1)

    def r_ok(r: float) -> bool:
        return bool(np.all(coef * _potential_values(V, ball(r)) < 1.0 / 3.0))

    r_hi = rho / 2.0 * (1 - 1e-9)
    if r_ok(r_hi):
        r = r_hi
    else:
        r_lo = r_hi
        while not r_ok(r_lo):
            r_lo /= 2.0
            if r_lo < 1e-300:
                raise ValueError("V does not vanish at x0")
        r = _bisect_geometric(r_ok, r_lo, r_hi, steps)

    xs = ball(r)

    def b_ok(beta: float) -> bool:
        s = Supersolution(K, beta, r, x0, T, alpha, n)
        return float(condition_4_3(s, V, C, p, xs).min()) > 0

    b_hi = 1 - 1e-12
    if b_ok(b_hi):
        beta = b_hi
    else:
        b_lo = 0.5
        while not b_ok(b_lo):
            b_lo /= 2.0
            if b_lo < 1e-300:
                raise ValueError("no admissible beta")
        beta = _bisect_geometric(b_ok, b_lo, b_hi, steps)
    # back off from the feasibility edge so the condition holds with margin
    beta *= 0.5
    s = Supersolution(K, beta, r, x0, T, alpha, n)
    res = supersolution_residual(s, V, C, p, xs)
    return SupersolutionSearch(s, M, res.condition_4_3_min, res.min_residual, rho)


def type_one_amplitude(trajectory: Trajectory, T_hat: float, alpha: float, region: np.ndarray) -> float:
    """Smallest M with u <= M (T_hat - t)^-alpha on ``region`` at every frame before T_hat."""
    M = 0.0
    for s in trajectory.snapshots:
        tau = T_hat - s.t
        if tau <= 0:
            continue
        M = max(M, float(tau**alpha * s.u[region].max()))
    return M


def supersolution_dominates(s: Supersolution, trajectory: Trajectory) -> tuple[bool, float]:
    """u <= w on the grid nodes of B(x0, r) at every stored frame.

    Returns the verdict and the largest ratio u / w seen.
    """
    x = trajectory.x
    inside = np.abs(x - s.x0) <= s.r
    worst = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for st in trajectory.snapshots:
            w = s.w(st.t, x[inside])
            worst = max(worst, float(np.max(np.where(np.isfinite(w), st.u[inside] / w, 0.0))))
    return worst <= 1.0, worst


# --------------------------------------------------------------------------
# cutoff profile
# --------------------------------------------------------------------------

CONTACT = 2.0 / 3.0
PLATEAU = 0.5

# degree-6 interpolant in s = 2/3 - x: h(1/2) = 1, h'(1/2) = h''(1/2) = 0,
# h = h' = h'' = 0 at 2/3 and h'''(2/3) = -6 in the x variable
_H_IN_S = Polynomial([0.0, 0.0, 0.0, 1.0, 19422.0, -186516.0, 466344.0])


def cutoff_h(x):
    """The blending polynomial h on [1/2, 2/3]."""
    return _H_IN_S(CONTACT - np.asarray(x, dtype=float))


def _h_derivs(x):
    s = CONTACT - np.asarray(x, dtype=float)
    return _H_IN_S(s), -_H_IN_S.deriv(1)(s), _H_IN_S.deriv(2)(s)


@dataclass(frozen=True)
class ExponentCheck:
    term: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs >= self.rhs

    def describe(self) -> str:
        rel = ">=" if self.passed else "<"
        return f"{self.term}: exponent {self.lhs:g} {rel} sigma*3l = {self.rhs:g}"


def cutoff_feasibility(l: int, sigma: float) -> tuple[ExponentCheck, ExponentCheck]:
    """Per-term exponent checks near the contact point.

    With psi ~ (a-s)^(3l), |grad phi|^2 ~ (a-s)^(2(3l-1)) and
    Lap(phi^2) = 2 phi Lap phi + 2 |grad phi|^2 ~ (a-s)^(6l-2), so both terms
    need 6l - 2 >= 3 l sigma to be bounded by phi^sigma.
    """
    grad = ExponentCheck("|grad phi|^2", 2 * (3 * l - 1), sigma * 3 * l)
    lap = ExponentCheck("|Lap phi^2|", (3 * l - 1) + (3 * l - 1), sigma * 3 * l)
    return grad, lap


class InfeasibleCutoff(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    R: float
    sigma: float
    l: int
    n: int
    r: np.ndarray  # radial sample points in [0, R]
    phi: np.ndarray
    grad_sq: np.ndarray
    lap_phi_sq: np.ndarray
    C_inferred: float
    checks: tuple[ExponentCheck, ExponentCheck]

    def __call__(self, x):
        return _psi(np.abs(np.asarray(x, dtype=float)) / self.R, self.l)[0]

    def as_dict(self) -> dict:
        return {"R": self.R, "sigma": self.sigma, "l": self.l, "n": self.n, "C_inferred": self.C_inferred,
                "checks": [c.describe() for c in self.checks]}


def _psi(s, l: int):
    """psi, psi', psi'' for psi = h^l on (1/2, 2/3), 1 below, 0 above."""
    s = np.asarray(s, dtype=float)
    psi = np.where(s <= PLATEAU, 1.0, 0.0)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    mid = (s > PLATEAU) & (s < CONTACT)
    h, h1, h2 = _h_derivs(s[mid])
    psi[mid] = h**l
    d1[mid] = l * h ** (l - 1) * h1
    d2[mid] = l * (l - 1) * h ** (l - 2) * h1 * h1 + l * h ** (l - 1) * h2
    return psi, d1, d2


def cutoff_build(R: float, l: int, sigma: float, n: int = 1, points: int = 20001) -> CutoffProfile:
    """Sample phi_R(x) = psi(|x|/R) and infer C in |grad phi|^2 + |Lap phi^2| <= C phi^sigma.

    Raises
    ------
    InfeasibleCutoff
        When an exponent inequality fails for (l, sigma).
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if int(l) != l or l < 2:
        raise ValueError("l must be an integer >= 2")
    if not 0 < sigma < 2:
        raise ValueError("sigma must lie in (0, 2)")
    checks = cutoff_feasibility(int(l), sigma)
    bad = [c for c in checks if not c.passed]
    if bad:
        raise InfeasibleCutoff("; ".join(c.describe() for c in bad))
    r = np.linspace(0.0, R, points)
    psi, d1, d2 = _psi(r / R, int(l))
    grad = d1 / R
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = d2 / R**2 + np.where(r > 0, (n - 1) * grad / np.where(r > 0, r, 1.0), (n - 1) * d2 / R**2)
    grad_sq = grad * grad
    lap_sq = 2 * psi * lap + 2 * grad_sq
    pos = psi > 0
    C = float(np.max((grad_sq[pos] + np.abs(lap_sq[pos])) / psi[pos] ** sigma))
    return CutoffProfile(float(R), float(sigma), int(l), int(n), r, psi, grad_sq, lap_sq, C, checks)


@dataclass(frozen=True)
class LocalBoundExponent:
    m: float
    alpha: float
    admissible: bool


def local_bound_exponent(p: float, k: float, epsilon: float) -> LocalBoundExponent:
    """m = (1 + 2 eps) k^(p-1), which must stay below alpha.

    Raises
    ------
    ValueError
        When k is not in (0, kappa) or m >= alpha.
    """
    c = critical_exponents(1, p)
    if not 0 < k < c.kappa:
        raise ValueError(f"need 0 < k < kappa = {c.kappa:.6g}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    m = (1 + 2 * epsilon) * k ** (p - 1)
    if not m < c.alpha:
        raise ValueError(f"m = {m:.6g} is not below alpha = {c.alpha:.6g}; choose a smaller epsilon")
    return LocalBoundExponent(m, c.alpha, True)


# --------------------------------------------------------------------------
# comparison function threshold
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdCheck:
    passed: bool
    margin: float
    B: float

    def __bool__(self) -> bool:
        return self.passed


def comparison_threshold_check(p: float, A: float, k: float, epsilon: float, C_eps: float,
                               tau0: float, B: float | None = None) -> ThresholdCheck:
    """B alpha - A B^p - eps >= C_eps tau0^(p alpha) with B in (k A^-alpha, kappa A^-alpha).

    B defaults to the midpoint of that interval.
    """
    c = critical_exponents(1, p)
    if not 0 < k < c.kappa:
        raise ValueError(f"need 0 < k < kappa = {c.kappa:.6g}")
    lo, hi = k * A ** (-c.alpha), c.kappa * A ** (-c.alpha)
    if B is None:
        B = 0.5 * (lo + hi)
    elif not lo < B < hi:
        raise ValueError("B must lie strictly between k A^-alpha and kappa A^-alpha")
    margin = B * c.alpha - A * B**p - epsilon - C_eps * tau0 ** (p * c.alpha)
    return ThresholdCheck(margin >= 0, margin, B)


# --------------------------------------------------------------------------
# self-similar rescaling
# --------------------------------------------------------------------------


class WindowOutOfSupport(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RescaledWindow:
    lam: float
    t_hat: float
    x0: float
    alpha: float
    s: np.ndarray
    y: np.ndarray
    v: np.ndarray  # shape (len(s), len(y))

    def physical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inverse map: times, positions and u = lam^(-2 alpha) v."""
        t = self.t_hat + self.lam**2 * self.s
        x = self.x0 + self.lam * self.y
        return t, x, self.lam ** (-2 * self.alpha) * self.v

    def flatness(self, row: int = 0) -> float:
        """max |v(s, y) / v(s, 0) - 1| along one s row."""
        v = self.v[row]
        c = v[np.argmin(np.abs(self.y))]
        return float(np.max(np.abs(v / c - 1)))


def _interp_snapshot(traj: Trajectory, t: float, x: np.ndarray) -> np.ndarray:
    times = traj.times
    j = int(np.searchsorted(times, t, side="right")) - 1
    j = min(max(j, 0), len(times) - 1)
    u0 = np.interp(x, traj.x, traj.snapshots[j].u)
    if times[j] == t or j == len(times) - 1:
        return u0
    u1 = np.interp(x, traj.x, traj.snapshots[j + 1].u)
    w = (t - times[j]) / (times[j + 1] - times[j])
    return (1 - w) * u0 + w * u1


def rescale_window(trajectory: Trajectory, t_hat: float, x0: float, T_hat: float, alpha: float,
                   s_values=None, y_values=None, s_range=(-1.0, 0.5), y_max: float = 1.0,
                   ns: int = 16, ny: int = 33) -> RescaledWindow:
    """v(s, y) = lam^(2 alpha) u(t_hat + lam^2 s, x0 + lam y), lam = sqrt(T_hat - t_hat).

    Values between stored frames and nodes are bilinearly interpolated.

    Raises
    ------
    WindowOutOfSupport
        The window reaches outside the stored times or the spatial grid.
    """
    if not t_hat < T_hat:
        raise WindowOutOfSupport("t_hat must precede T_hat")
    lam = math.sqrt(T_hat - t_hat)
    s = np.linspace(*s_range, ns) if s_values is None else np.asarray(s_values, dtype=float)
    y = np.linspace(-y_max, y_max, ny) if y_values is None else np.asarray(y_values, dtype=float)
    t = t_hat + lam**2 * s
    x = x0 + lam * y
    times = trajectory.times
    tol = 1e-12 * max(abs(times[-1]), 1.0)
    if t.min() < times[0] - tol or t.max() > times[-1] + tol:
        raise WindowOutOfSupport(f"times [{t.min():.6g}, {t.max():.6g}] outside stored [{times[0]:.6g}, {times[-1]:.6g}]")
    gx = trajectory.x
    if x.min() < gx[0] - 1e-12 or x.max() > gx[-1] + 1e-12:
        raise WindowOutOfSupport("window leaves the spatial grid")
    v = np.stack([lam ** (2 * alpha) * _interp_snapshot(trajectory, float(tk), x) for tk in t])
    return RescaledWindow(lam, float(t_hat), float(x0), float(alpha), s, y, v)


def rescaled_nonlinearity(f: Nonlinearity, lam: float, v) -> np.ndarray:
    """lam^(2p/(p-1)) f(lam^(-2/(p-1)) v); identically v^p for the pure power."""
    if not f.power_like:
        raise ValueError("rescaling is defined for power-like nonlinearities")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("v must be nonnegative")
    p = f.param
    if f.kind == "power":
        return v**p
    return lam ** (2 * p / (p - 1)) * f.f(lam ** (-2 / (p - 1)) * v)


# --------------------------------------------------------------------------
# Dirichlet heat kernel on (0, 1)
# --------------------------------------------------------------------------

TAIL_TOL = 1e-12


def heat_kernel_terms(t: float, tol: float = TAIL_TOL) -> int:
    """Smallest N whose tail bounds for G and dG/dy are both below ``tol``.

    Uses sum_{k>N} e^{-k^2 pi^2 t} <= e^{-pi^2 t N^2} / (2 pi^2 t N) and
    sum_{k>N} k e^{-k^2 pi^2 t} <= e^{-pi^2 t N^2} / (2 pi^2 t).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    a = math.pi**2 * t
    # the integral comparison for k e^{-a k^2} needs N past its maximum
    N = max(1, math.ceil(math.sqrt(1.0 / (2 * a))))
    while True:
        e = math.exp(-a * N * N)
        tail_g = 2 * e / (2 * a * N)
        tail_f = 2 * math.pi * e / (2 * a)
        if tail_g < tol and tail_f < tol:
            return N
        N += 1


@dataclass(frozen=True, eq=False)
class HeatKernel:
    G: np.ndarray
    flux: np.ndarray
    n_terms: int


def dirichlet_heat_kernel(t: float, x, y, n_terms: int | None = None) -> HeatKernel:
    """G(t, x, y) = sum 2 sin(k pi x) sin(k pi y) e^{-k^2 pi^2 t} and dG/dy at y = 0 (as a function of x)."""
    if not t > 0:
        raise ValueError("t must be positive")
    N = heat_kernel_terms(t) if n_terms is None else int(n_terms)
    k = np.arange(1, N + 1, dtype=float)
    decay = np.exp(-k * k * math.pi**2 * t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = np.sin(np.multiply.outer(x, k) * math.pi)
    sy = np.sin(np.multiply.outer(y, k) * math.pi)
    G = 2 * np.sum(sx * sy * decay, axis=-1)
    flux = 2 * math.pi * np.sum(sx * (k * decay), axis=-1)
    return HeatKernel(G, flux, N)


def heat_kernel_mass(t: float, x, n_terms: int | None = None) -> np.ndarray:
    """integral of G(t, x, y) dy over (0, 1), from the termwise closed form."""
    N = heat_kernel_terms(t) if n_terms is None else int(n_terms)
    k = np.arange(1, N + 1, dtype=float)
    w = (1 - np.cos(k * math.pi)) / (k * math.pi)
    decay = np.exp(-k * k * math.pi**2 * t)
    sx = np.sin(np.multiply.outer(np.asarray(x, dtype=float), k) * math.pi)
    return 2 * np.sum(sx * w * decay, axis=-1)


@dataclass(frozen=True)
class HeatKernelBoundFit:
    c1: float
    c2: float
    violations: int
    samples: int


def heat_kernel_lower_bound_fit(ts, xs, ys, c2_grid=None) -> HeatKernelBoundFit:
    """Fit G >= c1 min(rho(x) rho(y)/t, 1) t^(-1/2) exp(-c2 |x-y|^2 / t).

    For each c2 on the grid, c1 is the largest value the samples allow; the
    pair with the largest c1 is returned with the count of violating samples.
    """
    if c2_grid is None:
        c2_grid = np.logspace(-2, 1, 61)
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    rho = lambda z: np.minimum(z, 1 - z)
    Gs, base, d2 = [], [], []
    for t in np.asarray(ts, dtype=float):
        G = dirichlet_heat_kernel(t, xs[:, None], ys[None, :]).G
        Gs.append(G)
        base.append(np.minimum(rho(X) * rho(Y) / t, 1.0) * t**-0.5)
        d2.append((X - Y) ** 2 / t)
    Gs, base, d2 = np.stack(Gs), np.stack(base), np.stack(d2)
    # both sides vanish on the boundary, where only roundoff is left in G
    pos = base > 0
    best = (0.0, float(c2_grid[0]))
    for c2 in c2_grid:
        shape = base * np.exp(-c2 * d2)
        ok = pos & (shape > 0)
        c1 = float(np.min(Gs[ok] / shape[ok]))
        if c1 > best[0]:
            best = (c1, float(c2))
    c1, c2 = best
    viol = int(np.sum(pos & (Gs < c1 * base * np.exp(-c2 * d2) * (1 - 1e-12))))
    return HeatKernelBoundFit(c1, c2, viol, int(pos.sum()))
