"""Time the compiled sweep kernels against the numpy fallback on the tracking problem.

Usage: python benchmarks/bench_kernels.py [--dt 1e-3] [--k 1e4] [--repeat 5]
"""

import argparse
import time

import numpy as np

from supctrl import _kernels
from supctrl.adjoint import step_jacobians
from supctrl.dynamics import integrate_regularized
from supctrl.problems import build_problem


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--k", type=float, default=1e4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.compiled is None:
        raise SystemExit("compiled kernels are not available (unset SUPCTRL_PURE or build the extension)")

    p = build_problem("fig1_tracking")
    grid = p.grid(args.dt)
    N, dt, k = grid.n_hist, grid.dt, args.k
    aff = p.affine
    W = np.ascontiguousarray(np.clip(np.sin(3 * grid.t_fwd[:-1]), -5, 5)[:, None])
    X0 = np.zeros((grid.n_nodes, 1))

    fwd = integrate_regularized(p, np.vstack([W, W[-1:]]), k, grid)
    Fx, Fy = step_jacobians(p, fwd)
    x = fwd.x_fwd
    jx = np.ascontiguousarray(p.j_x(grid.t_fwd[:-1], x[:-1], W))
    gx = np.zeros(1)
    X = np.ascontiguousarray(fwd.state.values)
    col = np.ascontiguousarray(X[:, 0])

    cases = {
        "forward LIE": lambda m: m.forward_affine_lie(aff.A, aff.B, aff.c, aff.G, W, X0.copy(), N, dt, k),
        "forward hard": lambda m: m.forward_affine_hard(aff.A, aff.B, aff.c, aff.G, W, X0.copy(), N, dt),
        "sliding max": lambda m: m.sliding_max(col, N, grid.n_fwd),
        "adjoint sweep": lambda m: m.adjoint_sweep(Fx, Fy, jx, gx, X, fwd.shift, fwd.sums, N, dt, k),
    }
    print(f"fig1 grid: dt={dt:g}, window {N} nodes, {grid.n_fwd} steps, k={k:g}")
    print(f"{'kernel':<14} {'compiled [ms]':>14} {'numpy [ms]':>12} {'speedup':>9}")
    for name, fn in cases.items():
        tc = _best(lambda: fn(_kernels.compiled), args.repeat)
        tp = _best(lambda: fn(_kernels.pure), max(1, args.repeat // 2))
        print(f"{name:<14} {1e3 * tc:>14.2f} {1e3 * tp:>12.2f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
