"""Compare the numba and numpy back ends of the time-stepping kernel.

    python3 benchmarks/bench_kernels.py [--sizes 256 1024 4096] [--steps 2000]

For each grid size the same fixed number of RK2 steps is taken with both
back ends from identical data; the table reports time per step, the speedup
and the largest difference between the two results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from blowuplab import Domain, Interval, Nonlinearity, Potential, make_problem
from blowuplab import _kernels as K


def _problem(n: int):
    dom = Domain(Interval(-1.0, 1.0), n)
    return make_problem(dom, Potential.constant(1.0), Nonlinearity.power(2.0), "10*(1 - x^2)^2")


def _steps(spec, steps: int, backend: str) -> tuple[float, np.ndarray]:
    cm, cc, cp, fixed = spec.domain.stencil
    f = spec.nonlinearity
    u = np.array(spec.initial_data)
    dt_diff = spec.domain.spacing**2 / 2.0
    t0 = time.perf_counter()
    # targets out of reach so that exactly ``steps`` steps are taken
    K.run_chunk(u, np.ascontiguousarray(spec.V), cm, cc, cp, fixed, f.code, f.param, 0.0, dt_diff, 0.4,
                1e300, 1e300, 1e300, 1e300, 0.0, steps, backend=backend)
    return time.perf_counter() - t0, u


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])
    if K.HAVE_NUMBA:
        _steps(_problem(64), 2, "numba")  # compile outside the timings
    print(f"{'nodes':>6} {'backend':>8} {'us/step':>10} {'speedup':>8} {'max diff':>10}")
    for n in args.sizes:
        spec = _problem(n)
        res = {}
        for b in backends:
            best = min(_steps(spec, args.steps, b)[0] for _ in range(args.repeat))
            res[b] = (best, _steps(spec, args.steps, b)[1])
        base = res["numpy"][0]
        for b, (tm, u) in res.items():
            diff = float(np.max(np.abs(u - res["numpy"][1])))
            print(f"{n:>6} {b:>8} {1e6 * tm / args.steps:>10.2f} {base / tm:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
