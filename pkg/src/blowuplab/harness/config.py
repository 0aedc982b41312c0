"""Flat INI configuration with dotted section names.

A config names the problem (``[domain]``, ``[potential]``, ``[nonlinearity]``,
``[initial]``, optional ``[params]``), solver tolerances (``[solver]``),
diagnostics (``[diagnostics.<name>]``), assertions (``[acceptance]``), sweep
axes (``[sweep]``) and output (``[output]``).  Presets ship as such files.
"""

from __future__ import annotations

import configparser
import copy
import io
import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..problem import (Boundary, Domain, Expression, Interval, Nonlinearity, Potential, ProblemSpec,
                       RadialAnnulus, RadialBall, load_two_column_csv, make_problem)
from ..solver import SolverConfig

PRESET_PACKAGE = "blowuplab.harness"


class ConfigError(ValueError):
    pass


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    return cp


def list_presets() -> list[str]:
    root = resources.files(PRESET_PACKAGE) / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    root = resources.files(PRESET_PACKAGE) / "presets"
    f = root / f"{name}.ini"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return f.read_text()


@dataclass
class RunConfig:
    """Parsed configuration; ``sections`` maps section name to raw key/value strings."""

    sections: dict[str, dict[str, str]]
    source: str = "<inline>"
    base_dir: Path = field(default_factory=Path.cwd)

    # construction ----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<inline>", base_dir=None) -> "RunConfig":
        cp = _parser()
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        secs = {s: dict(cp[s]) for s in cp.sections()}
        cfg = cls(secs, source, Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path_or_preset: str) -> "RunConfig":
        """Read a config file, or a shipped preset when no such file exists."""
        p = Path(path_or_preset)
        if p.is_file():
            return cls.from_text(p.read_text(), str(p), p.parent)
        return cls.from_text(preset_text(str(path_or_preset)), f"preset:{path_or_preset}")

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        """Copy with ``section.key`` entries replaced (the last dot splits section from key)."""
        secs = copy.deepcopy(self.sections)
        for dotted, value in overrides.items():
            sec, _, key = dotted.rpartition(".")
            if not sec:
                raise ConfigError(f"override {dotted!r} needs a section")
            secs.setdefault(sec, {})[key] = str(value)
        secs.pop("sweep", None)
        cfg = RunConfig(secs, self.source, self.base_dir)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        cp = _parser()
        for s, kv in self.sections.items():
            cp[s] = kv
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    # accessors -------------------------------------------------------------

    def section(self, name: str) -> dict[str, str]:
        return self.sections.get(name, {})

    def has(self, name: str) -> bool:
        return name in self.sections

    def get(self, section: str, key: str, default=None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    def getfloat(self, section: str, key: str, default: float | None = None) -> float | None:
        v = self.get(section, key)
        if v is None:
            return default
        try:
            return float(self._expr(v))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"[{section}] {key} = {v!r}: {exc}") from None

    def getint(self, section: str, key: str, default: int | None = None) -> int | None:
        v = self.getfloat(section, key)
        if v is None:
            return default
        if v != int(v):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return int(v)

    def getbool(self, section: str, key: str, default: bool = False) -> bool:
        v = self.get(section, key)
        if v is None:
            return default
        v = v.strip().lower()
        if v in ("1", "yes", "true", "on"):
            return True
        if v in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean")

    @property
    def name(self) -> str:
        return self.get("experiment", "name", Path(self.source).stem)

    @property
    def params(self) -> dict[str, float]:
        out = {}
        for k, v in self.section("params").items():
            out[k] = float(Expression(v, out).scalar())
        return out

    def _expr(self, text: str) -> float:
        return Expression(text, self.params).scalar()

    @property
    def diagnostics(self) -> list[str]:
        return [s.split(".", 1)[1] for s in self.sections if s.startswith("diagnostics.")]

    @property
    def acceptance(self) -> dict[str, str]:
        return dict(self.section("acceptance"))

    @property
    def sweep_axes(self) -> dict[str, list[str]]:
        axes = {}
        for k, v in self.section("sweep").items():
            vals = [a.strip() for a in v.split(",") if a.strip()]
            if not vals:
                raise ConfigError(f"sweep axis {k} is empty")
            axes[k] = vals
        return axes

    def sweep_cells(self) -> list[dict[str, str]]:
        axes = self.sweep_axes
        keys = list(axes)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]

    # validation ------------------------------------------------------------

    def validate(self) -> None:
        for s in ("domain", "potential", "nonlinearity", "initial"):
            if s not in self.sections:
                raise ConfigError(f"missing section [{s}]")
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(f"[params]: {exc}") from None
        for k in self.section("sweep"):
            sec, _, key = k.rpartition(".")
            if not sec:
                raise ConfigError(f"sweep axis {k!r} must be written section.key")
            if sec not in self.sections and sec != "params":
                raise ConfigError(f"sweep axis {k!r} refers to a missing section")
        known = set(DIAGNOSTIC_NAMES)
        for d in self.diagnostics:
            if d not in known:
                raise ConfigError(f"unknown diagnostic [diagnostics.{d}]")
        self.solver_config()

    # builders --------------------------------------------------------------

    def domain(self) -> Domain:
        g = self.get("domain", "geometry", "interval").lower()
        n = self.getint("domain", "n", 1)
        if g == "interval":
            geom = Interval(self.getfloat("domain", "a"), self.getfloat("domain", "b"))
        elif g == "ball":
            geom = RadialBall(n, self.getfloat("domain", "R"))
        elif g == "annulus":
            geom = RadialAnnulus(n, self.getfloat("domain", "r1"), self.getfloat("domain", "r2"))
        else:
            raise ConfigError(f"unknown geometry {g!r}")
        return Domain(geom, self.getint("domain", "grid_points", 257),
                      Boundary(self.get("domain", "boundary", "dirichlet").lower()))

    def potential(self) -> Potential:
        form = self.get("potential", "form", "expression").lower()
        if form == "constant":
            return Potential.constant(self.getfloat("potential", "value"))
        if form == "power_of_radius":
            return Potential.power_of_radius(self.getfloat("potential", "sigma"))
        if form == "expression":
            return Potential.expression(self.get("potential", "expression"), **self.params)
        if form == "csv":
            return Potential.from_csv(self.base_dir / self.get("potential", "file"))
        raise ConfigError(f"unknown potential form {form!r}")

    def nonlinearity(self) -> Nonlinearity:
        kind = self.get("nonlinearity", "kind", "power").lower()
        if kind == "exponential":
            return Nonlinearity.exponential()
        return Nonlinearity(kind, self.getfloat("nonlinearity", "param"))

    def problem(self) -> ProblemSpec:
        d = self.domain()
        init = self.section("initial")
        if "file" in init:
            xs, vs = load_two_column_csv(self.base_dir / init["file"])
            u0 = np.interp(d.nodes, xs, vs)
        elif "expression" in init:
            u0 = init["expression"]
        else:
            raise ConfigError("[initial] needs expression or file")
        return make_problem(d, self.potential(), self.nonlinearity(), u0, label=self.name, params=self.params)

    def solver_config(self) -> SolverConfig:
        s = "solver"
        kw = {}
        for key in ("u_blow", "dt_min_factor", "safety", "horizon", "steady_tol"):
            v = self.getfloat(s, key)
            if v is not None:
                kw[key] = v
        for key in ("snapshots_per_decade", "time_frames", "max_snapshots", "max_steps"):
            v = self.getint(s, key)
            if v is not None:
                kw[key] = v
        if self.get(s, "backend"):
            kw["backend"] = self.get(s, "backend")
        try:
            return SolverConfig(**kw)
        except ValueError as exc:
            raise ConfigError(f"[solver]: {exc}") from None


DIAGNOSTIC_NAMES = (
    "exact_ode",
    "rate",
    "nondegeneracy",
    "deviation",
    "zeroset",
    "jcert",
    "supersolution",
    "monotone",
    "symmetry",
    "weak_rate",
    "kaplan",
    "global_blowup",
    "origin_excluded",
)
