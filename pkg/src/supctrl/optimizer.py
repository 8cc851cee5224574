"""Projected gradient method with Armijo backtracking on the control box."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import AdjointOutput, JumpRecord, detect_jumps, projected_residual, reduced_gradient
from .dynamics import _control_array, evaluate_objective, integrate_regularized
from .problems import ProblemDefinition, TimeGrid, Trajectory

log = logging.getLogger(__name__)

__all__ = ["BadBounds", "OptimizerConfig", "SolveReport", "project_box", "projected_gradient"]

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"
STEP_STALL = "StepStall"


class BadBounds(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Line-search and stopping parameters.

    ``initial_step`` is ``"fixed"`` (every line search starts at ``step0``),
    ``"bb"`` (start at the long Barzilai-Borwein step ``du.du / du.dg``) or
    ``"abb"`` (alternate the long and the short step ``du.dg / dg.dg``).  BB
    trial steps are clipped to ``[min_step, bb_max]``; ``step0`` is then only
    used on the first iteration or when the curvature estimate is not
    positive.  Acceptance is Armijo in every mode, so the objective still
    decreases monotonically.
    """

    max_iters: int = 5000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    tol_stationarity: float = 1e-8
    min_step: float = 1e-14
    initial_step: str = "fixed"
    bb_max: float = 1e4

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not self.step0 > 0 or not self.min_step > 0 or not self.bb_max > 0:
            raise ValueError("step sizes must be positive")
        if self.initial_step not in ("fixed", "bb", "abb"):
            raise ValueError(f"unknown initial_step {self.initial_step!r}")


@dataclass
class SolveReport:
    control: Trajectory
    state: Trajectory
    adjoint: AdjointOutput
    gradient: Trajectory
    objective_history: np.ndarray
    stationarity_history: np.ndarray
    jumps: list[JumpRecord]
    iterations: int
    termination: str
    k: float
    elapsed: float = 0.0
    forward_solves: int = 0
    fwd: object = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return float(self.objective_history[-1])

    @property
    def stationarity(self) -> float:
        return float(self.stationarity_history[-1])


def project_box(u, lo, hi):
    """Clip every node of ``u`` into ``[lo, hi]`` (componentwise)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if np.any(lo > hi):
        raise BadBounds("lower bound exceeds upper bound")
    if isinstance(u, Trajectory):
        return Trajectory(u.grid, np.clip(u.values, lo, hi), u.span)
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def projected_gradient(problem: ProblemDefinition, k: float, grid: TimeGrid,
                       config: Optional[OptimizerConfig] = None, u0=None,
                       detect: bool = True, spike_threshold: float = 20.0) -> SolveReport:
    """Minimise the discrete regularized objective over the control box.

    Starts from ``u0`` (zero if omitted, projected onto the box).  Each
    iteration takes ``u+ = clip(u - s g)`` and backtracks ``s`` until
    ``J(u+) <= J(u) - c * dt * sum(g * (u - u+))``.
    """
    config = config or OptimizerConfig()
    t_start = time.perf_counter()
    lo, hi = problem.u_lo, problem.u_hi
    if u0 is None:
        u = np.zeros((grid.n_fwd + 1, problem.m))
    else:
        u = _control_array(problem, u0, grid).copy()
    u = project_box(u, lo, hi)
    dt = grid.dt

    g_traj, J, fwd, adj = reduced_gradient(problem, u, k, grid)
    g = g_traj.values
    objectives = [J]
    stationarity = []
    termination = MAX_ITERS
    prev = None  # (u, g) of the previous iterate for the BB step
    n_evals = 1
    it = 0
    for it in range(config.max_iters + 1):
        res = projected_residual(u, g, lo, hi)
        stationarity.append(res)
        if res < config.tol_stationarity:
            termination = CONVERGED
            break
        if it == config.max_iters:
            break
        s = config.step0
        if config.initial_step != "fixed" and prev is not None:
            du = (u - prev[0]).ravel()
            dg = (g - prev[1]).ravel()
            curv = float(du @ dg)
            if curv > 0:
                short = config.initial_step == "abb" and it % 2 == 1
                bb = curv / float(dg @ dg) if short else float(du @ du) / curv
                s = min(config.bb_max, max(config.min_step, bb))
        while True:
            u_new = np.clip(u - s * g, lo, hi)
            decrease = dt * float(np.sum(g * (u - u_new)))
            fwd_new = integrate_regularized(problem, u_new, k, grid)
            n_evals += 1
            J_new = evaluate_objective(problem, fwd_new, u_new)
            if J_new <= J - config.armijo_c * decrease and J_new < J:
                break
            s *= config.backtrack
            if s < config.min_step:
                termination = STEP_STALL
                break
        if termination == STEP_STALL:
            log.warning("line search stalled at iteration %d (stationarity %.3e)", it, res)
            break
        prev = (u, g)
        u = u_new
        g_traj, J, fwd, adj = reduced_gradient(problem, u, k, grid, fwd_new)
        g = g_traj.values
        objectives.append(J)
        if it % 100 == 0:
            log.info("iter %d  J=%.10g  stationarity=%.3e  step=%.3e", it, J, res, s)

    jumps = detect_jumps(adj, fwd, problem, grid, spike_threshold) if detect else []
    return SolveReport(
        control=Trajectory(grid, u),
        state=fwd.state,
        adjoint=adj,
        gradient=Trajectory(grid, g),
        objective_history=np.asarray(objectives),
        stationarity_history=np.asarray(stationarity),
        jumps=jumps,
        iterations=it,
        termination=termination,
        k=float(k),
        elapsed=time.perf_counter() - t_start,
        forward_solves=n_evals,
        fwd=fwd,
    )
