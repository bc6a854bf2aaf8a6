"""Numba vs numpy timings for the hot kernels on the desk-scale 1-D problem.

    python benchmarks/bench_kernels.py [--n 128] [--m 129] [--repeat 5]

Each kernel is run once untimed (numba compiles on first call, and the
numpy path warms its caches), then timed as the best of ``--repeat`` runs.
The two backends must agree; the max deviation is printed next to the timing.
"""

import argparse
import math
import time

import numpy as np

from weakkam import kernels
from weakkam._accel import NUMBA_AVAILABLE
from weakkam.barrier import build_action_kernel
from weakkam.discounted import SolverParams, _prepare
from weakkam.model import HamiltonianModel, TorusGrid, VelocityGrid, legendre_transform


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def deviation(a, b):
    if isinstance(a, tuple):
        return max(deviation(x, y) for x, y in zip(a, b) if isinstance(x, np.ndarray) and x.dtype.kind == "f")
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--m", type=int, default=129)
    ap.add_argument("--vmax", type=float, default=4.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sweeps", type=int, default=200, help="value-iteration sweeps per timing")
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    xg, vg = TorusGrid(1, args.n), VelocityGrid(1, args.vmax, args.m)
    table = legendre_transform(HamiltonianModel.mechanical("cos(2*pi*x1)", 1), xg, vg)
    params = SolverParams()
    cost, idx, wts = _prepare(table, 1.0, params)
    beta = math.exp(-0.25 * params.tau)
    u = np.random.default_rng(0).standard_normal(xg.n_nodes)
    kern = build_action_kernel(table, 1.0, 0.05).entries

    cases = {
        "bellman_sweep": (
            lambda: kernels.bellman_sweep_numpy(cost, beta, idx, wts, u),
            lambda: kernels.bellman_sweep_numba(cost, beta, idx, wts, u),
        ),
        "value_iteration": (
            lambda: kernels.value_iteration_numpy(cost, beta, idx, wts, u, 0.0, args.sweeps),
            lambda: kernels.value_iteration_numba(cost, beta, idx, wts, u, 0.0, args.sweeps),
        ),
        "minplus": (
            lambda: kernels.minplus_numpy(kern, kern),
            lambda: kernels.minplus_numba(kern, kern),
        ),
    }
    print(f"grid n={args.n} m={args.m}, best of {args.repeat}")
    print(f"{'kernel':<16} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8} {'max dev':>10}")
    for name, (f_np, f_nb) in cases.items():
        t_np, o_np = best_of(f_np, args.repeat)
        t_nb, o_nb = best_of(f_nb, args.repeat)
        print(f"{name:<16} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f} {deviation(o_np, o_nb):10.2e}")


if __name__ == "__main__":
    main()
