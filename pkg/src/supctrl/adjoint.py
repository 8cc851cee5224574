"""Discrete adjoint of the regularized Euler scheme and derived diagnostics.

Indexing: ``lam[j]`` is the multiplier of Euler step ``j`` (the update from
``t_j`` to ``t_{j+1}``) with the sign chosen so that in the limit it solves
``lam' + lam F_x + (delayed window term) = j_x``.  ``lam[n_fwd] = 0`` is the
terminal value and the reduced gradient at node ``j`` is
``j_u - F1^T lam[j]``; for the tracking problem this reads ``beta*u - lam``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .dynamics import ForwardSolveOutput, _control_array, evaluate_objective, integrate_regularized
from .problems import ProblemDefinition, TimeGrid, Trajectory

log = logging.getLogger(__name__)

__all__ = [
    "MissingWeights",
    "AdjointOutput",
    "JumpRecord",
    "step_jacobians",
    "solve_discrete_adjoint",
    "reduced_gradient",
    "gradient_check",
    "projected_residual",
    "optimality_residual",
    "detect_jumps",
    "ambiguous_max_signs",
]


class MissingWeights(ValueError):
    pass


@dataclass(frozen=True)
class AdjointOutput:
    """Multipliers, their forward differences and the delayed window term.

    ``delayed[m]`` is the density (per unit time) of the window coupling that
    the backward sweep collects on forward node ``m``; with it the recursion
    reads ``dlambda[m-1] = jx[m] - lam[m] F_x[m] - delayed[m]``.
    """

    lam: Trajectory
    dlambda: Trajectory
    delayed: Optional[Trajectory] = None

    @property
    def values(self) -> np.ndarray:
        return self.lam.values


@dataclass(frozen=True)
class JumpRecord:
    """Observed jump ``lam_i(s0+) - lam_i(s0-)`` and the argmax-interval prediction."""

    component: int
    time: float
    magnitude: float
    predicted: float
    argmax_interval: Optional[tuple[float, float]] = None

    @property
    def relative_gap(self) -> float:
        return abs(self.magnitude - self.predicted) / max(abs(self.predicted), 1e-300)


def step_jacobians(problem: ProblemDefinition, fwd: ForwardSolveOutput):
    """Per-step ``F_x`` and ``F_y`` (each ``(n_fwd, n, n)``) along a forward solve."""
    x = fwd.x_fwd[:-1]
    v = fwd.aux_v
    w = fwd.w
    Fx = np.broadcast_to(problem.F0_x(x, v) + problem.F1u_x(x, v, w), x.shape + (problem.n,))
    Fy = np.broadcast_to(problem.F0_y(x, v) + problem.F1u_y(x, v, w), x.shape + (problem.n,))
    return np.ascontiguousarray(Fx, dtype=float), np.ascontiguousarray(Fy, dtype=float)


def _weight_cache(fwd: ForwardSolveOutput, k: Optional[float]):
    if fwd.shift is not None and fwd.sums is not None:
        return fwd.shift, fwd.sums, fwd.k
    if k is None:
        raise MissingWeights("forward solve carries no weights and no k was given")
    grid = fwd.grid
    X = fwd.state.values
    win = np.moveaxis(np.lib.stride_tricks.sliding_window_view(X, grid.n_hist, axis=0)[: grid.n_fwd], -1, 1)
    shift = win.max(axis=1)
    sums = np.exp(k * (win - shift[:, None, :])).sum(axis=1)
    return shift, sums, float(k)


def solve_discrete_adjoint(problem: ProblemDefinition, fwd: ForwardSolveOutput, control,
                           k: Optional[float] = None, grid: Optional[TimeGrid] = None) -> AdjointOutput:
    """Backward sweep of the transposed linearised Euler recursion.

    The delayed coupling is handled by scattering each step's window weights
    onto the earlier nodes as soon as that step's multiplier is known.
    """
    grid = grid or fwd.grid
    if fwd.mode != "regularized":
        raise ValueError("the discrete adjoint is defined for regularized solves")
    u = _control_array(problem, control, grid)
    shift, sums, k = _weight_cache(fwd, k)
    Fx, Fy = step_jacobians(problem, fwd)
    x = fwd.x_fwd
    jx = np.ascontiguousarray(np.broadcast_to(problem.j_x(grid.t_fwd[:-1], x[:-1], u[:-1]), x[:-1].shape), dtype=float)
    gx = np.ascontiguousarray(np.broadcast_to(problem.terminal_x(x[-1]), (problem.n,)), dtype=float)
    lam, acc = _kernels.adjoint_sweep(
        Fx, Fy, jx, gx, np.ascontiguousarray(fwd.state.values),
        np.ascontiguousarray(shift), np.ascontiguousarray(sums), grid.n_hist, grid.dt, k,
    )
    dl = np.empty_like(lam)
    dl[:-1] = np.diff(lam, axis=0) / grid.dt
    dl[-1] = dl[-2] if len(dl) > 1 else 0.0
    return AdjointOutput(Trajectory(grid, lam), Trajectory(grid, dl), Trajectory(grid, acc / grid.dt))


def reduced_gradient(problem: ProblemDefinition, control, k: float, grid: TimeGrid,
                     fwd: Optional[ForwardSolveOutput] = None):
    """Gradient of the discrete objective with respect to the nodal controls.

    Returns ``(gradient, objective, fwd, adj)``; the gradient is scaled by
    ``1/dt`` so that ``dt * sum(g * du)`` is the directional derivative.  The
    control at ``t = T`` does not enter the discrete objective and gets zero.
    A regularized forward solve of ``control`` with sharpness ``k`` may be
    passed in as ``fwd`` to skip the sweep.
    """
    u = _control_array(problem, control, grid)
    if fwd is None or fwd.shift is None:
        fwd = integrate_regularized(problem, u, k, grid)
    adj = solve_discrete_adjoint(problem, fwd, u, k, grid)
    lam = adj.lam.values
    x = fwd.x_fwd[:-1]
    F1 = problem.F1(x, fwd.aux_v)
    back = np.einsum("jim,ji->jm", np.broadcast_to(F1, x.shape + (problem.m,)), lam[:-1])
    if problem.control_map_du is not None:
        back = back * problem.control_map_du(u[:-1])
    g = np.zeros_like(u)
    g[:-1] = problem.j_u(grid.t_fwd[:-1], x, u[:-1]) - back
    J = evaluate_objective(problem, fwd, u)
    return Trajectory(grid, g), J, fwd, adj


def gradient_check(problem: ProblemDefinition, k: float, grid: TimeGrid, n_checks: int = 20,
                   h: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Relative errors of adjoint directional derivatives against central differences.

    Controls are drawn uniformly from the box, directions are standard normal
    (zero at the last node, which the discrete objective ignores).
    """
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(problem.u_lo, (problem.m,))
    hi = np.broadcast_to(problem.u_hi, (problem.m,))
    shape = (grid.n_fwd + 1, problem.m)
    errors = np.empty(n_checks)
    for c in range(n_checks):
        u = rng.uniform(lo, hi, size=shape)
        du = rng.standard_normal(shape)
        du[-1] = 0.0
        g, *_ = reduced_gradient(problem, u, k, grid)
        adj_dd = grid.dt * float(np.sum(g.values * du))
        jp = evaluate_objective(problem, integrate_regularized(problem, u + h * du, k, grid), u + h * du)
        jm = evaluate_objective(problem, integrate_regularized(problem, u - h * du, k, grid), u - h * du)
        fd = (jp - jm) / (2.0 * h)
        errors[c] = abs(fd - adj_dd) / max(abs(fd), abs(adj_dd), 1e-300)
    return errors


def projected_residual(u: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """``max |u - clip(u - g, lo, hi)|``."""
    return float(np.max(np.abs(u - np.clip(u - g, lo, hi)))) if np.size(u) else 0.0


def optimality_residual(problem: ProblemDefinition, control, k: float, grid: TimeGrid) -> float:
    u = _control_array(problem, control, grid)
    g, *_ = reduced_gradient(problem, u, k, grid)
    return projected_residual(u, g.values, problem.u_lo, problem.u_hi)


def _clusters(flags: np.ndarray, gap: int) -> list[tuple[int, int]]:
    idx = np.flatnonzero(flags)
    if idx.size == 0:
        return []
    out = []
    start = prev = int(idx[0])
    for i in idx[1:]:
        i = int(i)
        if i - prev > gap:
            out.append((start, prev))
            start = i
        prev = i
    out.append((start, prev))
    return out


def _unique_argmax_steps(x: np.ndarray, N: int, n_fwd: int, node: int, rtol: float = 1e-9) -> np.ndarray:
    """Steps whose window (full-grid column ``x``) has its maximum uniquely at ``node``."""
    steps = np.arange(max(0, node - N + 1), min(n_fwd, node + 1))
    keep = []
    for j in steps:
        win = x[j:j + N]
        q = node - j
        top = win[q]
        others = np.delete(win, q)
        if others.size == 0 or np.max(others) < top - rtol * (1.0 + abs(top)):
            keep.append(j)
    return np.asarray(keep, dtype=np.int64)


def _side_fit(D: np.ndarray, idx: np.ndarray):
    # linear trend through D[idx] (constant for very short samples, zero if empty)
    if idx.size >= 3:
        return np.polynomial.Polynomial.fit(idx, D[idx], 1)
    val = float(np.mean(D[idx])) if idx.size else 0.0
    return lambda m: np.full(np.shape(m), val)


def _excess_span(D: np.ndarray, s0: int, lo: int, hi: int, width: int, frac: float = 0.01):
    """Grow ``[lo, hi]`` while the delayed density departs from its one-sided trends.

    Returns the span and the baseline (left trend before ``s0``, right trend
    after it, their mean at ``s0``) evaluated on every node.
    """
    last = len(D) - 1
    nodes = np.arange(len(D))
    for _ in range(3):
        L = max(5, 2 * width)
        left = _side_fit(D, np.arange(max(1, lo - L), lo))
        right = _side_fit(D, np.arange(hi + 1, min(last, hi + L) + 1))
        base = np.where(nodes < s0, left(nodes), right(nodes))
        base[s0] = 0.5 * (left(s0) + right(s0))
        excess = np.abs(D - base)
        cut = frac * float(excess[lo:hi + 1].max())
        lo0, hi0 = lo, hi
        while lo > 1 and excess[lo - 1] > cut and s0 - lo < 4 * width:
            lo -= 1
        while hi < last and excess[hi + 1] > cut and hi - s0 < 4 * width:
            hi += 1
        width = max(width, hi - lo + 1)
        if (lo, hi) == (lo0, hi0):
            break
    return lo, hi, base


def detect_jumps(adj: AdjointOutput, fwd: ForwardSolveOutput, problem: ProblemDefinition,
                 grid: Optional[TimeGrid] = None, spike_threshold: float = 20.0,
                 merge_gap: int = 3) -> list[JumpRecord]:
    """Locate adjoint jumps as clusters of spikes in ``d lam / dt``.

    A spike is a node where ``|d lam_i|`` exceeds ``spike_threshold`` times its
    median.  A cluster counts as a jump only if the state has a strict local
    maximum ``s0`` inside it; clusters caused by a large but smooth ``j_x`` are
    dropped that way.  The observed magnitude ``lam_i(s0+) - lam_i(s0-)`` is
    the change of ``lam_i`` across the smeared spike minus the smooth part of
    the recursion, i.e. ``-dt * sum(delayed - baseline)`` with one-sided
    baselines taken just outside the spike.  The prediction is
    ``-sum dt * lam^T F_y e_i`` over the steps whose window maximum is attained
    uniquely at ``s0``.
    """
    grid = grid or fwd.grid
    N, n_fwd, dt = grid.n_hist, grid.n_fwd, grid.dt
    if adj.delayed is None:
        raise ValueError("adjoint output carries no delayed term")
    lam = adj.lam.values
    dl = adj.dlambda.values[:n_fwd]
    D_all = adj.delayed.values
    X = fwd.state.values
    _, Fy = step_jacobians(problem, fwd)
    records = []
    for i in range(problem.n):
        mag = np.abs(dl[:, i])
        if not np.any(mag > 0):
            continue
        med = float(np.median(mag))
        flags = mag > spike_threshold * med if med > 0 else mag > 0
        col = X[:, i]
        xf = col[N:]
        D = D_all[:, i]
        for a, b in _clusters(flags, merge_gap):
            # dl[j] spans lam[j] -> lam[j+1]; the delayed mass of forward node m lands on dl[m-1]
            lo, hi = max(a + 1, 1), min(b + 1, n_fwd - 1)
            if lo > hi:
                continue
            s0 = lo + int(np.argmax(xf[lo:hi + 1]))
            if not (0 < s0 < n_fwd and xf[s0] > xf[s0 - 1] and xf[s0] > xf[s0 + 1]):
                log.debug("cluster %d..%d of component %d has no strict local maximum", a, b, i)
                continue
            lo, hi, base = _excess_span(D, s0, lo, hi, hi - lo + 1)
            magnitude = -dt * float(np.sum(D[lo:hi + 1] - base[lo:hi + 1]))
            steps = _unique_argmax_steps(col, N, n_fwd, N + s0)
            if steps.size:
                predicted = -dt * float(np.einsum("jr,jr->", lam[steps], Fy[steps, :, i]))
                interval = (float(grid.t_fwd[steps[0]]), float(grid.t_fwd[steps[-1]]))
            else:
                predicted, interval = float("nan"), None
            records.append(JumpRecord(i, float(grid.t_fwd[s0]), magnitude, predicted, interval))
    return records


def ambiguous_max_signs(adj: AdjointOutput, fwd: ForwardSolveOutput, problem: ProblemDefinition,
                        rtol: float = 1e-9) -> list[tuple[float, int, float]]:
    """``(t, i, [F_y^T lam]_i)`` at steps whose window maximum is not unique (diagnostic only)."""
    grid = fwd.grid
    N = grid.n_hist
    _, Fy = step_jacobians(problem, fwd)
    lam = adj.lam.values
    X = fwd.state.values
    out = []
    for j in range(grid.n_fwd):
        win = X[j:j + N]
        top = win.max(axis=0)
        close = (win >= top - rtol * (1.0 + np.abs(top))).sum(axis=0)
        for i in np.flatnonzero(close > 1):
            val = float((Fy[j].T @ lam[j])[i])
            out.append((float(grid.t_fwd[j]), int(i), val))
    if out:
        log.debug("%d steps with non-unique window maxima", len(out))
    return out
