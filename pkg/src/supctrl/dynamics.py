"""Forward solvers for the state equation with a trailing-window maximum.

One discrete system is used throughout: explicit Euler on the uniform grid,
where step ``j`` sees the window of the ``N = tau/dt`` samples strictly before
``t_j`` (times ``t_j - tau, ..., t_j - dt``), smoothed by the rectangle-rule
LogIntExp or taken as the exact maximum.  The Picard iteration, the integral
residual and the discrete adjoint all refer to this same recursion.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .problems import ProblemDefinition, TimeGrid, Trajectory
from .smoothmax import lie_all_windows, lie_vector_window, window_max_all

__all__ = [
    "NonFinite",
    "NoConvergence",
    "ForwardSolveOutput",
    "integrate_regularized",
    "integrate_hardmax",
    "picard_solve",
    "integral_residual",
    "evaluate_objective",
    "window_values",
    "max_gronwall_bound",
]


class NonFinite(FloatingPointError):
    """The Euler sweep produced inf/nan; ``step`` is the first bad step."""

    def __init__(self, step: int):
        super().__init__(f"state became non-finite at step {step}; reduce dt")
        self.step = step


class NoConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"Picard iteration stalled after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class ForwardSolveOutput:
    """State on ``[-tau, T]`` plus the window values fed to ``F`` at every step.

    For regularized solves ``shift``/``sums`` hold, per step and component, the
    window maximum and the shifted exponential sum, from which the LogIntExp
    weights are rebuilt on demand (see :meth:`weights`).
    """

    grid: TimeGrid
    state: Trajectory
    aux_v: np.ndarray  # (n_fwd, n)
    mode: str
    w: Optional[np.ndarray] = None  # effective control per step, (n_fwd, m)
    k: Optional[float] = None
    shift: Optional[np.ndarray] = None
    sums: Optional[np.ndarray] = None
    argmax: Optional[np.ndarray] = None

    @property
    def x_fwd(self) -> np.ndarray:
        return self.state.forward

    def weights(self, step: int) -> np.ndarray:
        """Weight densities ``(N, n)`` of the window used by ``step``."""
        if self.shift is None:
            raise ValueError("no weight cache (hard-max solve or cache disabled)")
        N = self.grid.n_hist
        win = self.state.values[step:step + N]
        return np.exp(self.k * (win - self.shift[step])) / (self.grid.dt * self.sums[step])


def _control_array(problem: ProblemDefinition, control, grid: TimeGrid) -> np.ndarray:
    u = control.values if isinstance(control, Trajectory) else np.asarray(control, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (grid.n_fwd + 1, problem.m):
        raise ValueError(f"control must have shape {(grid.n_fwd + 1, problem.m)}, got {u.shape}")
    return u


def _check_grid(problem: ProblemDefinition, grid: TimeGrid) -> None:
    if abs(grid.tau - problem.tau) > 1e-12 * problem.tau or abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise ValueError("grid does not match the problem's tau/T")


def _start_state(problem: ProblemDefinition, grid: TimeGrid) -> np.ndarray:
    X = np.empty((grid.n_nodes, problem.n))
    X[: grid.n_hist + 1] = problem.history(grid)
    return X


def _raise_nonfinite(X: np.ndarray, grid: TimeGrid) -> None:
    bad = ~np.all(np.isfinite(X[grid.n_hist:]), axis=1)
    if bad.any():
        raise NonFinite(int(np.argmax(bad)) - 1)


def _affine_arrays(problem: ProblemDefinition):
    a = problem.affine
    return (np.ascontiguousarray(a.A, dtype=float), np.ascontiguousarray(a.B, dtype=float),
            np.ascontiguousarray(a.c, dtype=float), np.ascontiguousarray(a.G, dtype=float))


def integrate_regularized(problem: ProblemDefinition, control, k: float, grid: TimeGrid,
                          cache_weights: bool = True, use_affine: bool = True) -> ForwardSolveOutput:
    """Euler sweep with the window maximum replaced by LogIntExp of sharpness ``k``."""
    _check_grid(problem, grid)
    u = _control_array(problem, control, grid)
    W = np.ascontiguousarray(problem.effective_control(u[:-1]), dtype=float)
    X = _start_state(problem, grid)
    N, dt = grid.n_hist, grid.dt
    if problem.affine is not None and use_affine:
        with np.errstate(over="ignore", invalid="ignore"):
            V, shift, S = _kernels.forward_affine_lie(*_affine_arrays(problem), W, X, N, dt, float(k))
        _raise_nonfinite(X, grid)
    else:
        n_fwd = grid.n_fwd
        V = np.empty((n_fwd, problem.n))
        shift = np.empty_like(V)
        S = np.empty_like(V)
        for j in range(n_fwd):
            win = X[j:j + N]
            mx = win.max(axis=0)
            s = np.exp(k * (win - mx)).sum(axis=0)
            V[j] = mx + np.log(dt * s) / k
            shift[j], S[j] = mx, s
            X[N + j + 1] = X[N + j] + dt * problem.rhs(X[N + j], V[j], u[j])
            if not np.all(np.isfinite(X[N + j + 1])):
                raise NonFinite(j)
    return ForwardSolveOutput(
        grid, Trajectory(grid, X, "full"), V, "regularized", W, float(k),
        shift if cache_weights else None, S if cache_weights else None,
    )


def integrate_hardmax(problem: ProblemDefinition, control, grid: TimeGrid,
                      use_affine: bool = True) -> ForwardSolveOutput:
    """Euler sweep with the exact window maximum (monotone deque, O(1) amortised)."""
    _check_grid(problem, grid)
    u = _control_array(problem, control, grid)
    W = np.ascontiguousarray(problem.effective_control(u[:-1]), dtype=float)
    X = _start_state(problem, grid)
    N, dt = grid.n_hist, grid.dt
    if problem.affine is not None and use_affine:
        with np.errstate(over="ignore", invalid="ignore"):
            V, arg = _kernels.forward_affine_hard(*_affine_arrays(problem), W, X, N, dt)
        _raise_nonfinite(X, grid)
    else:
        n, n_fwd = problem.n, grid.n_fwd
        V = np.empty((n_fwd, n))
        arg = np.empty((n_fwd, n), dtype=np.int64)
        dqs = [deque() for _ in range(n)]

        def push(i, f):
            dq = dqs[i]
            while dq and X[dq[-1], i] <= X[f, i]:
                dq.pop()
            dq.append(f)

        for i in range(n):
            for f in range(N - 1):
                push(i, f)
        for j in range(n_fwd):
            for i in range(n):
                push(i, j + N - 1)
                while dqs[i][0] < j:
                    dqs[i].popleft()
                arg[j, i] = dqs[i][0]
                V[j, i] = X[dqs[i][0], i]
            X[N + j + 1] = X[N + j] + dt * problem.rhs(X[N + j], V[j], u[j])
            if not np.all(np.isfinite(X[N + j + 1])):
                raise NonFinite(j)
    return ForwardSolveOutput(grid, Trajectory(grid, X, "full"), V, "hard", W, argmax=arg)


def window_values(X: np.ndarray, grid: TimeGrid, mode: str = "hard", k: Optional[float] = None) -> np.ndarray:
    """Window inputs ``v_j`` (shape ``(n_fwd, n)``) for a full-grid state ``X``."""
    N = grid.n_hist
    if mode == "hard":
        return window_max_all(X, N, grid.n_fwd)[0]
    if mode == "regularized":
        if k is None:
            raise ValueError("regularized mode needs k")
        return lie_all_windows(X, N, grid.n_fwd, grid.dt, k)
    raise ValueError(f"unknown mode {mode!r}")


def _mode_k(mode):
    # accepts "hard", "regularized" (k passed separately) or ("regularized", k)
    if isinstance(mode, tuple):
        return mode[0], float(mode[1])
    return mode, None


def picard_solve(problem: ProblemDefinition, control, grid: TimeGrid, mode="hard",
                 k: Optional[float] = None, tol: float = 1e-12, max_iter: int = 500):
    """Fixed-point iteration on the integral form, starting from ``x0(t) = phi(min(t, 0))``.

    Uses the same left-rectangle quadrature as the Euler sweep, so the fixed
    point is the Euler solution.  Returns ``(output, iterations, residual_history)``
    where ``residual_history[i]`` is the sup-norm gap between iterates ``i+1`` and ``i``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_grid(problem, grid)
    mode, k_t = _mode_k(mode)
    k = k_t if k_t is not None else k
    u = _control_array(problem, control, grid)
    N, dt = grid.n_hist, grid.dt
    X = _start_state(problem, grid)
    X[N + 1:] = X[N]
    history = []
    for it in range(1, max_iter + 1):
        V = window_values(X, grid, mode, k)
        slopes = problem.rhs(X[N:-1], V, u[:-1])
        X_new = X.copy()
        X_new[N + 1:] = X[N] + dt * np.cumsum(slopes, axis=0)
        if not np.all(np.isfinite(X_new)):
            raise NonFinite(-1)
        res = float(np.max(np.abs(X_new[N:] - X[N:])))
        history.append(res)
        X = X_new
        if res < tol:
            break
    else:
        raise NoConvergence(max_iter, history[-1])
    V = window_values(X, grid, mode, k)
    W = np.asarray(problem.effective_control(u[:-1]), dtype=float)
    out = ForwardSolveOutput(grid, Trajectory(grid, X, "full"), V, mode, W, k)
    return out, it, np.asarray(history)


def integral_residual(output: ForwardSolveOutput, control, problem: ProblemDefinition,
                      mode=None, k: Optional[float] = None) -> float:
    """``max_j |x(t_j) - phi(0) - dt * sum_{l<j} F(x_l, v_l, u_l)|`` over forward nodes."""
    grid = output.grid
    if mode is None:
        mode, k = output.mode, output.k
    mode, k_t = _mode_k(mode)
    k = k_t if k_t is not None else k
    u = _control_array(problem, control, grid)
    X = output.state.values
    N = grid.n_hist
    V = window_values(X, grid, mode, k)
    slopes = problem.rhs(X[N:-1], V, u[:-1])
    integral = np.vstack([np.zeros((1, problem.n)), grid.dt * np.cumsum(slopes, axis=0)])
    return float(np.max(np.abs(X[N:] - X[N] - integral)))


def evaluate_objective(problem: ProblemDefinition, output: ForwardSolveOutput, control) -> float:
    """Left-rectangle quadrature of the running cost plus the terminal cost."""
    grid = output.grid
    u = _control_array(problem, control, grid)
    x = output.x_fwd
    t = grid.t_fwd[:-1]
    running = grid.dt * float(np.sum(problem.j(t, x[:-1], u[:-1])))
    return running + float(np.sum(problem.terminal(x[-1])))


def max_gronwall_bound(k1: float, k2: float, t):
    """Bound ``k1 * exp(2 k2 t)`` for ``x <= k1 + k2 * int_0^t (x + max x_s) ds``, ``x = 0`` on the history."""
    return k1 * np.exp(2.0 * k2 * np.asarray(t, dtype=float))


def lie_step_weights(X: np.ndarray, grid: TimeGrid, step: int, k: float):
    """Value and weights of the regularized window used by ``step`` (no cache needed)."""
    N = grid.n_hist
    return lie_vector_window(X[step:step + N], grid.dt, k)
