"""Hot loops of the method-of-lines integrator.

Two interchangeable back ends live here: numba-compiled scalar loops and a
vectorised numpy path.  ``BLOWUPLAB_NO_NUMBA=1`` (or a missing numba install)
selects numpy.  Both evaluate the three-point stencil in the same order so that
mirror-symmetric data stays bitwise symmetric under either back end.

The stencil is stored as three coefficient arrays ``(cm, cc, cp)`` so that
``(L u)_i = (cm_i u_{i-1} + cp_i u_{i+1}) + cc_i u_i``; boundary closures
(ghost mirrors, the radial origin limit, Dirichlet rows) are folded into the
coefficients by :mod:`blowuplab.problem`.
"""

from __future__ import annotations

import math
import os

import numpy as np

KIND_POWER = 0
KIND_SHIFTED_POWER = 1
KIND_EXPONENTIAL = 2
KIND_LOG_POWER = 3

STATUS_TARGET = 0
STATUS_HORIZON = 1
STATUS_OVERFLOW = 2
STATUS_DT_MIN = 3
STATUS_NEGATIVE = 4
STATUS_BLOWUP = 5
STATUS_BUDGET = 6

U_SATURATION = 1e250
NEGATIVE_SLACK = 1e-12
RATE_FLOOR = 1e-30

_DISABLE = os.environ.get("BLOWUPLAB_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLE
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy back end
# --------------------------------------------------------------------------

def np_f(kind, param, u):
    u = np.asarray(u, dtype=float)
    if kind == KIND_POWER:
        return u * u if param == 2.0 else u**param
    if kind == KIND_SHIFTED_POWER:
        v = 1.0 + u
        return v * v if param == 2.0 else v**param
    if kind == KIND_EXPONENTIAL:
        with np.errstate(over="ignore"):
            return np.exp(u)
    lg = np.log1p(u)
    return u * lg**param


def np_df(kind, param, u):
    u = np.asarray(u, dtype=float)
    if kind == KIND_POWER:
        return 2.0 * u if param == 2.0 else param * u ** (param - 1.0)
    if kind == KIND_SHIFTED_POWER:
        return 2.0 * (1.0 + u) if param == 2.0 else param * (1.0 + u) ** (param - 1.0)
    if kind == KIND_EXPONENTIAL:
        with np.errstate(over="ignore"):
            return np.exp(u)
    lg = np.log1p(u)
    return lg**param + param * u * lg ** (param - 1.0) / (1.0 + u)


def np_laplacian(u, cm, cc, cp):
    out = np.empty_like(u)
    out[1:-1] = (cm[1:-1] * u[:-2] + cp[1:-1] * u[2:]) + cc[1:-1] * u[1:-1]
    out[0] = cp[0] * u[1] + cc[0] * u[0]
    out[-1] = cm[-1] * u[-2] + cc[-1] * u[-1]
    return out


def np_rhs(u, V, cm, cc, cp, kind, param):
    return np_laplacian(u, cm, cc, cp) + V * np_f(kind, param, u)


def np_max_rate(u, V, kind, param):
    return float(np.max(V * np_df(kind, param, u)))


def np_rk2_step(u, V, cm, cc, cp, fixed, kind, param, dt):
    """Return ``(u_new, bad)``; ``bad`` is -1 or the first offending node."""
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = np_rhs(u, V, cm, cc, cp, kind, param)
        mid = u + (0.5 * dt) * k1
        mid[fixed] = 0.0
        k2 = np_rhs(mid, V, cm, cc, cp, kind, param)
        new = u + dt * k2
    new[fixed] = 0.0
    bad = np.flatnonzero(~np.isfinite(new) | (new > U_SATURATION))
    if bad.size:
        return new, int(bad[0])
    neg = np.flatnonzero(new < -NEGATIVE_SLACK)
    if neg.size:
        return new, -2 - int(neg[0])
    np.maximum(new, 0.0, out=new)
    return new, -1


def np_run_chunk(u, V, cm, cc, cp, fixed, kind, param, t, dt_diff, safety,
                 level_target, t_target, horizon, u_blow, dt_min, max_steps):
    steps = 0
    dt = 0.0
    while steps < max_steps:
        rate = max(np_max_rate(u, V, kind, param), RATE_FLOOR)
        dt = safety * min(dt_diff, 1.0 / rate)
        if dt < dt_min:
            return t, steps, dt, STATUS_DT_MIN, -1
        if t + dt > horizon:
            dt = horizon - t
        new, bad = np_rk2_step(u, V, cm, cc, cp, fixed, kind, param, dt)
        if bad == -1:
            u[:] = new
        elif bad >= 0:
            return t, steps, dt, STATUS_OVERFLOW, bad
        else:
            return t, steps, dt, STATUS_NEGATIVE, -2 - bad
        t += dt
        steps += 1
        umax = u.max()
        if umax >= u_blow:
            return t, steps, dt, STATUS_BLOWUP, -1
        if t >= horizon:
            return t, steps, dt, STATUS_HORIZON, -1
        if umax >= level_target or t >= t_target:
            return t, steps, dt, STATUS_TARGET, -1
    return t, steps, dt, STATUS_BUDGET, -1


# --------------------------------------------------------------------------
# numba back end
# --------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _f1(kind, param, u):
        if kind == KIND_POWER:
            if param == 2.0:
                return u * u
            if param == 3.0:
                return u * u * u
            return u**param
        if kind == KIND_SHIFTED_POWER:
            v = 1.0 + u
            if param == 2.0:
                return v * v
            if param == 3.0:
                return v * v * v
            return v**param
        if kind == KIND_EXPONENTIAL:
            if u > 709.0:
                return math.inf
            return math.exp(u)
        lg = math.log1p(u)
        return u * lg**param

    @_jit
    def _df1(kind, param, u):
        if kind == KIND_POWER:
            if param == 2.0:
                return 2.0 * u
            if param == 3.0:
                return 3.0 * (u * u)
            return param * u ** (param - 1.0)
        if kind == KIND_SHIFTED_POWER:
            if param == 2.0:
                return 2.0 * (1.0 + u)
            if param == 3.0:
                return 3.0 * ((1.0 + u) * (1.0 + u))
            return param * (1.0 + u) ** (param - 1.0)
        if kind == KIND_EXPONENTIAL:
            if u > 709.0:
                return math.inf
            return math.exp(u)
        lg = math.log1p(u)
        return lg**param + param * u * lg ** (param - 1.0) / (1.0 + u)

    @_jit
    def _nb_rhs(u, V, cm, cc, cp, kind, param, out):
        n = u.shape[0]
        out[0] = cp[0] * u[1] + cc[0] * u[0] + V[0] * _f1(kind, param, u[0])
        for i in range(1, n - 1):
            out[i] = (cm[i] * u[i - 1] + cp[i] * u[i + 1]) + cc[i] * u[i] + V[i] * _f1(kind, param, u[i])
        out[n - 1] = cm[n - 1] * u[n - 2] + cc[n - 1] * u[n - 1] + V[n - 1] * _f1(kind, param, u[n - 1])

    @_jit
    def _nb_laplacian(u, cm, cc, cp):
        n = u.shape[0]
        out = np.empty(n)
        out[0] = cp[0] * u[1] + cc[0] * u[0]
        for i in range(1, n - 1):
            out[i] = (cm[i] * u[i - 1] + cp[i] * u[i + 1]) + cc[i] * u[i]
        out[n - 1] = cm[n - 1] * u[n - 2] + cc[n - 1] * u[n - 1]
        return out

    @_jit
    def _nb_max_rate(u, V, kind, param):
        m = 0.0
        for i in range(u.shape[0]):
            r = V[i] * _df1(kind, param, u[i])
            if r > m:
                m = r
        return m

    @_jit
    def _nb_step_into(u, V, cm, cc, cp, fixed, kind, param, dt, k, mid, new):
        n = u.shape[0]
        _nb_rhs(u, V, cm, cc, cp, kind, param, k)
        for i in range(n):
            mid[i] = 0.0 if fixed[i] else u[i] + (0.5 * dt) * k[i]
        _nb_rhs(mid, V, cm, cc, cp, kind, param, k)
        for i in range(n):
            new[i] = 0.0 if fixed[i] else u[i] + dt * k[i]
        for i in range(n):
            x = new[i]
            if not (x <= U_SATURATION):  # catches nan and inf too
                return i
        for i in range(n):
            if new[i] < -NEGATIVE_SLACK:
                return -2 - i
        for i in range(n):
            if new[i] < 0.0:
                new[i] = 0.0
        return -1

    @_jit
    def _nb_rk2_step(u, V, cm, cc, cp, fixed, kind, param, dt):
        n = u.shape[0]
        k = np.empty(n)
        mid = np.empty(n)
        new = np.empty(n)
        bad = _nb_step_into(u, V, cm, cc, cp, fixed, kind, param, dt, k, mid, new)
        return new, bad

    @_jit
    def _nb_run_chunk(u, V, cm, cc, cp, fixed, kind, param, t, dt_diff, safety,
                      level_target, t_target, horizon, u_blow, dt_min, max_steps):
        n = u.shape[0]
        k = np.empty(n)
        mid = np.empty(n)
        new = np.empty(n)
        steps = 0
        dt = 0.0
        while steps < max_steps:
            rate = _nb_max_rate(u, V, kind, param)
            if rate < RATE_FLOOR:
                rate = RATE_FLOOR
            dt = safety * min(dt_diff, 1.0 / rate)
            if dt < dt_min:
                return t, steps, dt, STATUS_DT_MIN, -1
            if t + dt > horizon:
                dt = horizon - t
            bad = _nb_step_into(u, V, cm, cc, cp, fixed, kind, param, dt, k, mid, new)
            if bad >= 0:
                return t, steps, dt, STATUS_OVERFLOW, bad
            if bad < -1:
                return t, steps, dt, STATUS_NEGATIVE, -2 - bad
            umax = 0.0
            for i in range(n):
                u[i] = new[i]
                if new[i] > umax:
                    umax = new[i]
            t += dt
            steps += 1
            if umax >= u_blow:
                return t, steps, dt, STATUS_BLOWUP, -1
            if t >= horizon:
                return t, steps, dt, STATUS_HORIZON, -1
            if umax >= level_target or t >= t_target:
                return t, steps, dt, STATUS_TARGET, -1
        return t, steps, dt, STATUS_BUDGET, -1


def _as_flags(fixed):
    return np.ascontiguousarray(fixed, dtype=np.bool_)


def laplacian(u, cm, cc, cp, backend=None):
    if (backend or BACKEND) == "numba":
        return _nb_laplacian(np.ascontiguousarray(u, dtype=float), cm, cc, cp)
    return np_laplacian(np.asarray(u, dtype=float), cm, cc, cp)


def rk2_step(u, V, cm, cc, cp, fixed, kind, param, dt, backend=None):
    u = np.ascontiguousarray(u, dtype=float)
    if (backend or BACKEND) == "numba":
        return _nb_rk2_step(u, V, cm, cc, cp, _as_flags(fixed), kind, float(param), float(dt))
    return np_rk2_step(u, V, cm, cc, cp, _as_flags(fixed), kind, float(param), float(dt))


def max_rate(u, V, kind, param, backend=None):
    if (backend or BACKEND) == "numba":
        return float(_nb_max_rate(np.ascontiguousarray(u, dtype=float), V, kind, float(param)))
    return np_max_rate(u, V, kind, float(param))


def run_chunk(u, V, cm, cc, cp, fixed, kind, param, t, dt_diff, safety,
              level_target, t_target, horizon, u_blow, dt_min, max_steps, backend=None):
    """Advance ``u`` in place until a snapshot trigger or a stop condition.

    Returns ``(t, steps, dt_last, status, bad_index)``.
    """
    args = (u, V, cm, cc, cp, _as_flags(fixed), int(kind), float(param), float(t), float(dt_diff),
            float(safety), float(level_target), float(t_target), float(horizon), float(u_blow),
            float(dt_min), int(max_steps))
    if (backend or BACKEND) == "numba":
        t, steps, dt, status, bad = _nb_run_chunk(*args)
    else:
        t, steps, dt, status, bad = np_run_chunk(*args)
    return float(t), int(steps), float(dt), int(status), int(bad)
