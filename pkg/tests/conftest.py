import numpy as np
import pytest

from blowuplab import Domain, Interval, Nonlinearity, Potential, make_problem
from blowuplab.harness.config import RunConfig
from blowuplab.harness.experiment import run_experiment
from blowuplab.solver import SolutionState, TerminalStatus, Trajectory


class PresetRuns:
    """Runs each (preset, overrides) pair once per session."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def __call__(self, name: str, **overrides):
        key = (name, tuple(sorted(overrides.items())))
        if key not in self.cache:
            cfg = RunConfig.load(name)
            if overrides:
                cfg = cfg.with_overrides(overrides)
            tag = name + "".join(f"_{k.split('.')[-1]}{v}" for k, v in sorted(overrides.items()))
            self.cache[key] = run_experiment(cfg, self.root / tag)
        return self.cache[key]


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    return PresetRuns(tmp_path_factory.mktemp("presets"))


@pytest.fixture
def interval_spec():
    def make(V=1.0, f=None, u0="1", n=257, a=-1.0, b=1.0, boundary="dirichlet"):
        from blowuplab import Boundary

        pot = V if isinstance(V, Potential) else Potential.constant(V)
        return make_problem(Domain(Interval(a, b), n, Boundary(boundary)), pot, f or Nonlinearity.power(2.0), u0)

    return make


def synthetic_trajectory(x, times, profile, status=TerminalStatus.BLOWUP) -> Trajectory:
    """Trajectory whose frames are profile(t, x) at the given times."""
    x = np.asarray(x, dtype=float)
    snaps = [SolutionState(float(t), np.asarray(profile(t, x), dtype=float), 0.0, i) for i, t in enumerate(times)]
    return Trajectory(x, snaps, status, [])
