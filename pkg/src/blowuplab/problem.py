"""Problem instances for u_t = Lap(u) + V(x) f(u).

A :class:`ProblemSpec` bundles a discretised domain, a nonnegative potential, a
nonlinearity and initial data.  Everything here is immutable once built; the
numeric arrays are flagged read-only.
"""

from __future__ import annotations

import ast
import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _kernels as K

OVERFLOW_THRESHOLD = K.U_SATURATION
ZERO_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# expressions
# --------------------------------------------------------------------------

_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}
_CONSTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    pass


class Expression:
    """Closed-form expression in ``x`` (and optional named parameters).

    The grammar is deliberately small: numbers, ``+ - * / ^``, parentheses,
    the functions ``abs cos sin exp log sqrt``, the constants ``pi`` and ``e``
    and the variable ``x``.  ``**`` is accepted as a synonym for ``^``.
    """

    def __init__(self, text: str, params: Mapping[str, float] | None = None):
        self.text = str(text).strip()
        self.params = {k: float(v) for k, v in (params or {}).items()}
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unary operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"unknown function in {self.text!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"functions take exactly one argument ({self.text!r})")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id != "x" and node.id not in _CONSTS and node.id not in self.params:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"bad literal in {self.text!r}")
        else:
            raise ExpressionError(f"construct {type(node).__name__} not allowed in {self.text!r}")

    def _eval(self, node, x):
        if isinstance(node, ast.BinOp):
            a, b = self._eval(node.left, x), self._eval(node.right, x)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b
            if isinstance(op, ast.Sub):
                return a - b
            if isinstance(op, ast.Mult):
                return a * b
            if isinstance(op, ast.Div):
                return a / b
            return np.power(a, b)
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, x)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], x))
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id in self.params:
                return self.params[node.id]
            return _CONSTS[node.id]
        return float(node.value)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, x)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def scalar(self) -> float:
        """Evaluate an expression that does not depend on ``x``."""
        return float(self(np.zeros(())))

    def __repr__(self):
        return f"Expression({self.text!r})"


def load_two_column_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x, value`` rows; a non-numeric header row is skipped."""
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) < 2:
                continue
            try:
                x, v = float(row[0]), float(row[1])
            except ValueError:
                if xs:
                    raise ValueError(f"{path}: non-numeric row {row!r}") from None
                continue
            xs.append(x)
            vs.append(v)
    if len(xs) < 2:
        raise ValueError(f"{path}: need at least two data rows")
    x = np.array(xs)
    if np.any(np.diff(x) <= 0):
        raise ValueError(f"{path}: x column must be strictly increasing")
    return x, np.array(vs)


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------

class Boundary(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"interval needs a < b, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class RadialBall:
    n: int
    R: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("dimension n must be a positive integer")
        if not self.R > 0:
            raise ValueError("ball radius must be positive")


@dataclass(frozen=True)
class RadialAnnulus:
    n: int
    r1: float
    r2: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("dimension n must be a positive integer")
        if not self.r1 > 0:
            raise ValueError("annulus inner radius must be positive (r1=0 is a ball)")
        if not self.r1 < self.r2:
            raise ValueError("annulus needs r1 < r2")


Geometry = Interval | RadialBall | RadialAnnulus


@dataclass(frozen=True)
class Domain:
    geometry: Geometry
    grid_points: int = 257
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if int(self.grid_points) != self.grid_points or self.grid_points < 16:
            raise ValueError("grid_points must be an integer >= 16")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def is_radial(self) -> bool:
        return not isinstance(self.geometry, Interval)

    @property
    def dimension(self) -> int:
        return 1 if isinstance(self.geometry, Interval) else int(self.geometry.n)

    @property
    def dim_factor(self) -> int:
        return self.dimension if self.is_radial else 1

    @property
    def extent(self) -> tuple[float, float]:
        g = self.geometry
        if isinstance(g, Interval):
            return g.a, g.b
        if isinstance(g, RadialBall):
            return 0.0, g.R
        return g.r1, g.r2

    @property
    def spacing(self) -> float:
        lo, hi = self.extent
        return (hi - lo) / (self.grid_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        lo, hi = self.extent
        x = np.linspace(lo, hi, self.grid_points)
        if isinstance(self.geometry, Interval) and lo == -hi:
            # exact mirror symmetry keeps even data even under the stencil
            x = 0.5 * (x - x[::-1])
        return _frozen(x)

    @cached_property
    def stencil(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Coefficients ``(cm, cc, cp)`` and the Dirichlet-node mask."""
        N, h = self.grid_points, self.spacing
        ih2 = 1.0 / (h * h)
        cm = np.full(N, ih2)
        cp = np.full(N, ih2)
        cc = np.full(N, -2.0 * ih2)
        fixed = np.zeros(N, dtype=bool)
        g = self.geometry
        if self.is_radial:
            r = self.nodes
            n = self.dimension
            inner = slice(1, N - 1)
            drift = (n - 1) / (2.0 * r[inner] * h)
            cm[inner] = ih2 - drift
            cp[inner] = ih2 + drift
        left_is_origin = isinstance(g, RadialBall)
        if left_is_origin:
            n = self.dimension
            cm[0], cc[0], cp[0] = 0.0, -2.0 * n * ih2, 2.0 * n * ih2
        for end in ((0,) if not left_is_origin else ()) + (N - 1,):
            if self.boundary is Boundary.DIRICHLET:
                fixed[end] = True
                cm[end] = cc[end] = cp[end] = 0.0
            elif end == 0:
                cm[0], cc[0], cp[0] = 0.0, -2.0 * ih2, 2.0 * ih2
            else:
                cm[end], cc[end], cp[end] = 2.0 * ih2, -2.0 * ih2, 0.0
        cm[0] = 0.0
        cp[N - 1] = 0.0
        for a in (cm, cc, cp, fixed):
            a.setflags(write=False)
        return cm, cc, cp, fixed

    @property
    def boundary_nodes(self) -> np.ndarray:
        """Indices on the geometric boundary (the radial origin is interior)."""
        if isinstance(self.geometry, RadialBall):
            return np.array([self.grid_points - 1])
        return np.array([0, self.grid_points - 1])

    def nearest_node(self, x: float) -> int:
        return int(np.argmin(np.abs(self.nodes - x)))

    def describe(self) -> dict:
        g = self.geometry
        d = {"geometry": type(g).__name__, "grid_points": self.grid_points, "boundary": self.boundary.value}
        d.update({k: getattr(g, k) for k in g.__dataclass_fields__})
        return d


# --------------------------------------------------------------------------
# nonlinearity
# --------------------------------------------------------------------------

_KIND_CODES = {
    "power": K.KIND_POWER,
    "shifted_power": K.KIND_SHIFTED_POWER,
    "exponential": K.KIND_EXPONENTIAL,
    "log_power": K.KIND_LOG_POWER,
}


class NonlinearityValue(NamedTuple):
    f: float
    df: float
    saturated: bool


@dataclass(frozen=True)
class Nonlinearity:
    """One of u^p, (1+u)^p, e^u, u log(1+u)^a.

    ``param`` is p for the two power kinds and a for ``log_power``.
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind in ("power", "shifted_power") and not self.param > 1:
            raise ValueError(f"power nonlinearities need p > 1, got {self.param}")
        if self.kind == "log_power" and not 1 < self.param < 2:
            raise ValueError(f"log_power needs 1 < a < 2, got {self.param}")
        object.__setattr__(self, "param", float(self.param))

    @classmethod
    def power(cls, p: float) -> "Nonlinearity":
        return cls("power", p)

    @classmethod
    def shifted_power(cls, p: float) -> "Nonlinearity":
        return cls("shifted_power", p)

    @classmethod
    def exponential(cls) -> "Nonlinearity":
        return cls("exponential", 0.0)

    @classmethod
    def log_power(cls, a: float) -> "Nonlinearity":
        return cls("log_power", a)

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def power_like(self) -> bool:
        return self.kind in ("power", "shifted_power")

    @property
    def p(self) -> float | None:
        return self.param if self.power_like else None

    @property
    def convex(self) -> bool:
        # log_power is convex on u >= 0 for a >= 1
        return True

    @property
    def saturation(self) -> float:
        """Largest u for which f(u) stays comfortably inside float range."""
        if self.kind == "exponential":
            return 700.0
        if self.power_like:
            return min(OVERFLOW_THRESHOLD, 10 ** (300.0 / self.param))
        return OVERFLOW_THRESHOLD

    def f(self, u):
        return K.np_f(self.code, self.param, u)

    def df(self, u):
        return K.np_df(self.code, self.param, u)

    def describe(self) -> dict:
        return {"kind": self.kind, "param": self.param}


def nonlinearity_eval(f: Nonlinearity, u: float) -> NonlinearityValue:
    """Exact f(u), f'(u).  Values past the saturation point come back as inf."""
    u = float(u)
    if not u >= 0:
        raise ValueError(f"nonlinearity evaluated at negative u={u}")
    if u > f.saturation:
        return NonlinearityValue(math.inf, math.inf, True)
    with np.errstate(over="ignore"):
        fv, dfv = float(f.f(u)), float(f.df(u))
    if not (math.isfinite(fv) and math.isfinite(dfv)):
        return NonlinearityValue(math.inf, math.inf, True)
    return NonlinearityValue(fv, dfv, False)


# --------------------------------------------------------------------------
# potential
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """x -> V(x).  For radial domains x is the radius."""

    form: str
    value: float = 0.0
    text: str = ""
    params: tuple = ()
    samples: tuple = ()

    def __post_init__(self):
        if self.form not in ("constant", "power_of_radius", "sampled", "expression"):
            raise ValueError(f"unknown potential form {self.form!r}")
        if self.form == "expression":
            object.__setattr__(self, "_expr", Expression(self.text, dict(self.params)))
        if self.form == "sampled":
            xs, vs = (np.asarray(a, dtype=float) for a in self.samples)
            if xs.shape != vs.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ValueError("sampled potential needs increasing x and matching values")

    @classmethod
    def constant(cls, c: float) -> "Potential":
        return cls("constant", float(c))

    @classmethod
    def power_of_radius(cls, sigma: float) -> "Potential":
        return cls("power_of_radius", float(sigma))

    @classmethod
    def sampled(cls, x: Sequence[float], v: Sequence[float]) -> "Potential":
        return cls("sampled", samples=(tuple(map(float, x)), tuple(map(float, v))))

    @classmethod
    def expression(cls, text: str, **params: float) -> "Potential":
        return cls("expression", text=text, params=tuple(sorted(params.items())))

    @classmethod
    def from_csv(cls, path) -> "Potential":
        x, v = load_two_column_csv(path)
        return cls.sampled(x, v)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.form == "constant":
            return np.full(x.shape, self.value)
        if self.form == "power_of_radius":
            return np.abs(x) ** self.value
        if self.form == "sampled":
            xs, vs = self.samples
            return np.interp(x, xs, vs)
        return self._expr(x)

    def describe(self) -> dict:
        d = {"form": self.form}
        if self.form in ("constant", "power_of_radius"):
            d["value"] = self.value
        elif self.form == "expression":
            d["text"] = self.text
            d["params"] = dict(self.params)
        else:
            d["samples"] = len(self.samples[0])
        return d


# --------------------------------------------------------------------------
# constants and the assembled problem
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalConstants:
    n: int
    p: float
    p_S: float
    alpha: float
    kappa: float
    subcritical: bool


def critical_exponents(n: int, p: float) -> CriticalConstants:
    """Sobolev exponent, blowup rate alpha = 1/(p-1) and kappa = alpha^alpha."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not p > 1:
        raise ValueError(f"need p > 1, got {p}")
    p_S = (n + 2) / (n - 2) if n >= 3 else math.inf
    alpha = 1.0 / (p - 1.0)
    return CriticalConstants(int(n), float(p), p_S, alpha, alpha**alpha, p < p_S)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    domain: Domain
    potential: Potential
    nonlinearity: Nonlinearity
    initial_data: np.ndarray
    constants: CriticalConstants | None = None
    label: str = ""

    def __post_init__(self):
        u0 = _frozen(self.initial_data)
        if u0.shape != (self.domain.grid_points,):
            raise ValueError(f"initial data has shape {u0.shape}, domain has {self.domain.grid_points} nodes")
        object.__setattr__(self, "initial_data", u0)
        if self.constants is None and self.nonlinearity.power_like:
            object.__setattr__(self, "constants", critical_exponents(self.domain.dimension, self.nonlinearity.param))

    @property
    def x(self) -> np.ndarray:
        return self.domain.nodes

    @cached_property
    def V(self) -> np.ndarray:
        return _frozen(self.potential(self.domain.nodes))

    def rhs(self, u) -> np.ndarray:
        """Discrete Lap(u) + V f(u) on every node (Dirichlet rows included)."""
        cm, cc, cp, _ = self.domain.stencil
        return K.np_rhs(np.asarray(u, dtype=float), self.V, cm, cc, cp, self.nonlinearity.code, self.nonlinearity.param)

    def describe(self) -> dict:
        return {
            "label": self.label,
            "domain": self.domain.describe(),
            "potential": self.potential.describe(),
            "nonlinearity": self.nonlinearity.describe(),
        }


def make_problem(domain: Domain, potential: Potential, nonlinearity: Nonlinearity,
                 initial, label: str = "", params: Mapping[str, float] | None = None) -> ProblemSpec:
    """Sample ``initial`` (array, callable or expression text) on the grid."""
    x = domain.nodes
    if isinstance(initial, str):
        u0 = Expression(initial, params)(x)
    elif callable(initial):
        u0 = np.asarray(initial(x), dtype=float)
    else:
        u0 = np.asarray(initial, dtype=float)
    u0 = np.array(u0, dtype=float)
    if domain.boundary is Boundary.DIRICHLET:
        _, _, _, fixed = domain.stencil
        # tiny roundoff from closed forms like cos(pi x/2) at x = +-1
        close = fixed & (np.abs(u0) < 1e-12)
        u0[close] = 0.0
    return ProblemSpec(domain, potential, nonlinearity, u0, label=label)


# --------------------------------------------------------------------------
# hypothesis validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    detail: str
    indices: tuple = ()
    required: bool = True


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[HypothesisCheck, ...]
    notes: tuple[str, ...] = ()
    inferred_growth_constant: float | None = None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    @property
    def failures(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if c.required and not c.passed]

    def get(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": {c.name: {"passed": c.passed, "detail": c.detail, "indices": list(c.indices),
                                "required": c.required} for c in self.checks},
            "notes": list(self.notes),
            "inferred_growth_constant": self.inferred_growth_constant,
        }


def _continuity_ratio(v: np.ndarray) -> tuple[float, float]:
    """Max successive jump on the grid and its ratio to the stride-2 jump."""
    fine = np.max(np.abs(np.diff(v))) if v.size > 1 else 0.0
    coarse = np.max(np.abs(np.diff(v[::2]))) if v.size > 2 else fine
    return float(fine), float(fine / coarse) if coarse > 0 else 0.0


def monotone_residual(spec: ProblemSpec) -> np.ndarray:
    """Lap(u0) + V f(u0) on free nodes (zero on Dirichlet nodes)."""
    r = spec.rhs(spec.initial_data)
    r[spec.domain.stencil[3]] = 0.0
    return r


def validate_hypotheses(spec: ProblemSpec) -> ValidationReport:
    checks: list[HypothesisCheck] = []
    notes: list[str] = []
    V, u0 = spec.V, spec.initial_data
    f = spec.nonlinearity

    bad = np.flatnonzero(~(V >= 0))
    checks.append(HypothesisCheck("potential_nonnegative", bad.size == 0,
                                  "V >= 0 on the grid" if bad.size == 0 else f"V < 0 at {bad.size} nodes",
                                  tuple(int(i) for i in bad)))

    jump, ratio = _continuity_ratio(V)
    scale = max(float(np.max(np.abs(V))), 1e-300)
    # a jump discontinuity keeps its size under refinement; continuous V shrinks it
    smooth = not (ratio > 0.9 and jump > 1e-3 * scale)
    checks.append(HypothesisCheck("potential_continuity", smooth,
                                  f"max successive difference {jump:.3g}, fine/coarse ratio {ratio:.3f}"))

    bad = np.flatnonzero(~(u0 >= 0))
    checks.append(HypothesisCheck("initial_nonnegative", bad.size == 0,
                                  "u0 >= 0" if bad.size == 0 else f"u0 < 0 at {bad.size} nodes",
                                  tuple(int(i) for i in bad)))

    fixed = spec.domain.stencil[3]
    bad = np.flatnonzero(fixed & (u0 != 0.0))
    checks.append(HypothesisCheck("boundary_compatible", bad.size == 0,
                                  "u0 = 0 on Dirichlet nodes" if bad.size == 0 else "u0 nonzero on Dirichlet nodes",
                                  tuple(int(i) for i in bad)))

    growth_constant = None
    if f.power_like:
        s = 1e6
        ratio = float(f.f(s)) / s**f.param
        checks.append(HypothesisCheck("growth_limit", 0.9 <= ratio <= 1.1,
                                      f"s^-p f(s) = {ratio:.6g} at s = 1e6"))
        sample = np.logspace(-6, 8, 400)
        growth_constant = float(np.max(np.abs(f.df(sample)) / (1.0 + sample ** (f.param - 1.0))))
        checks.append(HypothesisCheck("derivative_growth", math.isfinite(growth_constant),
                                      f"|f'(s)| <= C(1+s^(p-1)) with inferred C = {growth_constant:.6g}"))
        c = spec.constants
        notes.append(f"p = {c.p}, p_S = {c.p_S}, alpha = {c.alpha:.6g}, kappa = {c.kappa:.6g}, "
                     f"{'subcritical' if c.subcritical else 'not subcritical'}")
    else:
        notes.append(f"{f.kind} is not power-like; Theorem 1.1/1.2 predictions do not apply")

    res = monotone_residual(spec)
    scale = max(float(np.max(np.abs(res))), 1.0)
    neg = np.flatnonzero(res < -1e-12 * scale)
    checks.append(HypothesisCheck("monotone_residual", neg.size == 0,
                                  "Lap(u0) + V f(u0) >= 0 (monotone mode available)" if neg.size == 0
                                  else f"residual negative at {neg.size} nodes (monotone mode unavailable)",
                                  tuple(int(i) for i in neg), required=False))
    return ValidationReport(tuple(checks), tuple(notes), growth_constant)
