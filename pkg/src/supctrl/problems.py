"""Problem abstraction, uniform time grids, trajectories and the built-in problems.

All problem callables are *batched*: they accept arrays whose trailing axis is
the state (or control) dimension and broadcast over any leading axes.  This
lets the forward sweep evaluate one step at a time while the adjoint and the
objective evaluate every grid node in a single call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "NonCommensurateStep",
    "UnknownProblem",
    "OutOfDomain",
    "TimeGrid",
    "Trajectory",
    "AffineCoefficients",
    "ProblemDefinition",
    "ProblemId",
    "make_grid",
    "desired_state",
    "build_problem",
    "check_jacobians",
    "PROBLEMS",
]

_GRID_RTOL = 1e-12


class NonCommensurateStep(ValueError):
    """The step does not tile the history window or the horizon."""


class UnknownProblem(KeyError):
    pass


class OutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[-tau, T]``; node ``i`` sits at ``-tau + i*dt``.

    The first ``n_hist`` nodes carry the history, node ``n_hist`` is ``t = 0``
    and the last ``n_fwd`` nodes are the forward part.
    """

    tau: float
    T: float
    dt: float
    n_hist: int
    n_fwd: int

    @property
    def n_nodes(self) -> int:
        return self.n_hist + self.n_fwd + 1

    @property
    def window(self) -> int:
        """Number of samples in a trailing window of length ``tau``."""
        return self.n_hist

    def time(self, i):
        """Time of full-grid node ``i`` (scalar or array)."""
        return -self.tau + np.asarray(i) * self.dt

    def index(self, t: float) -> int:
        """Nearest full-grid node to time ``t``."""
        i = int(round((t + self.tau) / self.dt))
        if not 0 <= i < self.n_nodes:
            raise OutOfDomain(f"t={t} outside [{-self.tau}, {self.T}]")
        return i

    @property
    def t_full(self) -> np.ndarray:
        return -self.tau + np.arange(self.n_nodes) * self.dt

    @property
    def t_fwd(self) -> np.ndarray:
        """Times of the forward nodes ``0, dt, ..., T``."""
        return np.arange(self.n_fwd + 1) * self.dt

    @property
    def t_hist(self) -> np.ndarray:
        """Times of the history nodes ``-tau, ..., 0`` (``t = 0`` included)."""
        return -self.tau + np.arange(self.n_hist + 1) * self.dt


def _tiles(length: float, dt: float) -> int:
    q = length / dt
    n = int(round(q))
    if n < 1 or abs(n * dt - length) > _GRID_RTOL * max(length, 1.0):
        raise NonCommensurateStep(f"dt={dt} does not tile an interval of length {length}")
    return n


def make_grid(tau: float, T: float, dt: float) -> TimeGrid:
    if not (dt > 0 and tau > 0 and T > 0):
        raise NonCommensurateStep("tau, T and dt must be positive")
    return TimeGrid(float(tau), float(T), float(dt), _tiles(tau, dt), _tiles(T, dt))


@dataclass(frozen=True)
class Trajectory:
    """Grid-sampled vector function.

    ``span`` is ``"full"`` for ``[-tau, T]`` or ``"forward"`` for ``[0, T]``.
    ``values`` has shape ``(nodes, dim)``.
    """

    grid: TimeGrid
    values: np.ndarray
    span: str = "forward"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        expected = self.grid.n_nodes if self.span == "full" else self.grid.n_fwd + 1
        if self.span not in ("full", "forward"):
            raise ValueError(f"unknown span {self.span!r}")
        if v.shape[0] != expected:
            raise ValueError(f"{self.span} trajectory needs {expected} nodes, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.t_full if self.span == "full" else self.grid.t_fwd

    @property
    def forward(self) -> np.ndarray:
        """Values on ``[0, T]`` regardless of span."""
        return self.values[self.grid.n_hist:] if self.span == "full" else self.values

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable, span: str = "forward") -> "Trajectory":
        t = grid.t_full if span == "full" else grid.t_fwd
        return cls(grid, np.asarray([np.atleast_1d(fn(s)) for s in t], dtype=float), span)

    @classmethod
    def constant(cls, grid: TimeGrid, value, span: str = "forward") -> "Trajectory":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        n = grid.n_nodes if span == "full" else grid.n_fwd + 1
        return cls(grid, np.tile(value, (n, 1)), span)


@dataclass(frozen=True)
class AffineCoefficients:
    """Optional fast-path data: ``F0(x, v) = A x + B v + c`` and ``F1 = G``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    G: np.ndarray


def _zero_terminal(x):
    return np.zeros(np.shape(x)[:-1])


def _zero_terminal_grad(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemDefinition:
    """Optimal control problem with dynamics affine in the control.

    The right-hand side is always assembled as ``F0(x, v) + F1(x, v) @ w`` where
    ``v`` is the (smoothed) window maximum and ``w = control_map(u)``
    (identity unless given).  ``F1u_x``/``F1u_y`` are the Jacobians of
    ``F1(x, v) @ w`` for fixed ``w``.  Cost callables take ``(t, x, u)`` with
    leading batch axes and return one value per batch entry.
    """

    name: str
    n: int
    m: int
    tau: float
    T: float
    phi: Callable[[float], np.ndarray]
    F0: Callable
    F0_x: Callable
    F0_y: Callable
    F1: Callable
    F1u_x: Callable
    F1u_y: Callable
    j: Callable
    j_x: Callable
    j_u: Callable
    u_lo: np.ndarray
    u_hi: np.ndarray
    terminal: Callable = _zero_terminal
    terminal_x: Callable = _zero_terminal_grad
    control_map: Optional[Callable] = None
    control_map_du: Optional[Callable] = None
    affine: Optional[AffineCoefficients] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_hi, dtype=float))
        if lo.shape != (self.m,) or hi.shape != (self.m,):
            raise ValueError("control bounds must have shape (m,)")
        if np.any(lo > hi):
            raise ValueError("empty control box: u_lo > u_hi")
        object.__setattr__(self, "u_lo", lo)
        object.__setattr__(self, "u_hi", hi)
        if self.tau <= 0 or self.T <= 0:
            raise ValueError("tau and T must be positive")

    def effective_control(self, u: np.ndarray) -> np.ndarray:
        return u if self.control_map is None else self.control_map(u)

    def rhs(self, x, v, u):
        """``F(x, v, u)``; batched."""
        w = self.effective_control(np.asarray(u, dtype=float))
        return self.F0(x, v) + np.einsum("...ij,...j->...i", self.F1(x, v), w)

    def history(self, grid: TimeGrid) -> np.ndarray:
        """``phi`` sampled on the history nodes ``-tau, ..., 0``, shape ``(n_hist+1, n)``."""
        return np.asarray([np.atleast_1d(self.phi(t)) for t in grid.t_hist], dtype=float).reshape(-1, self.n)

    def grid(self, dt: float) -> TimeGrid:
        return make_grid(self.tau, self.T, dt)


# ---------------------------------------------------------------------------
# built-in problems

def desired_state(t):
    """Piecewise-linear tracking target on ``[0, 3]``: two tents around a flat zero."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > 3):
        raise OutOfDomain("desired state is defined on [0, 3]")
    out = np.where(
        t_arr <= 1.0,
        0.5 - np.abs(t_arr - 0.5),
        np.where(t_arr < 2.0, 0.0, np.abs(t_arr - 2.5) - 0.5),
    )
    return float(out) if np.ndim(out) == 0 else out


def _eye_batch(x, n):
    return np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy()


def _zeros_batch(x, a, b):
    return np.zeros(np.shape(x)[:-1] + (a, b))


def _fig1_tracking(alpha=100.0, beta=0.1, tau=0.2, T=3.0, u_lo=-5.0, u_hi=5.0) -> ProblemDefinition:
    if T > 3.0:
        raise ValueError("the tracking target is only defined up to T = 3")

    def F0(x, v):
        return np.asarray(x) - 2.0 * np.asarray(v)

    def F0_x(x, v):
        return _eye_batch(x, 1)

    def F0_y(x, v):
        return -2.0 * _eye_batch(x, 1)

    def F1(x, v):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    def F1u_zero(x, v, w):
        return _zeros_batch(x, 1, 1)

    def j(t, x, u):
        xd = desired_state(t)
        return 0.5 * alpha * (x[..., 0] - xd) ** 2 + 0.5 * beta * u[..., 0] ** 2

    def j_x(t, x, u):
        return alpha * (x - np.asarray(desired_state(t))[..., None])

    def j_u(t, x, u):
        return beta * np.asarray(u, dtype=float)

    return ProblemDefinition(
        name="fig1_tracking", n=1, m=1, tau=tau, T=T,
        phi=lambda t: np.zeros(1),
        F0=F0, F0_x=F0_x, F0_y=F0_y, F1=F1, F1u_x=F1u_zero, F1u_y=F1u_zero,
        j=j, j_x=j_x, j_u=j_u, u_lo=[u_lo], u_hi=[u_hi],
        affine=AffineCoefficients(
            A=np.eye(1), B=-2.0 * np.eye(1), c=np.zeros(1), G=np.ones((1, 1))
        ),
        params=dict(alpha=alpha, beta=beta, tau=tau, T=T, u_lo=u_lo, u_hi=u_hi),
    )


def _nonexistence_phi(t: float) -> np.ndarray:
    # one full period on each of [-2, -1] and [-1, 0]: both ranges are [-10, 10], phi(0) = 0
    return np.array([10.0 * np.sin(2.0 * np.pi * float(t))])


def _nonexistence_demo(tau=2.0, T=1.0, u_lo=-1.0, u_hi=3.0, weight=4.0) -> ProblemDefinition:
    """State ``x' = |u|`` (the max-form reduces to this under the chosen history)."""

    def F0(x, v):
        return np.zeros_like(np.asarray(x, dtype=float))

    def zero_nn(x, v):
        return _zeros_batch(x, 1, 1)

    def F1(x, v):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    def F1u_zero(x, v, w):
        return _zeros_batch(x, 1, 1)

    def j(t, x, u):
        return (x[..., 0] - 2.0 * np.asarray(t)) ** 2 + u[..., 0]

    def j_x(t, x, u):
        return 2.0 * (x - 2.0 * np.asarray(t)[..., None])

    def j_u(t, x, u):
        return np.ones_like(np.asarray(u, dtype=float))

    return ProblemDefinition(
        name="nonexistence_demo", n=1, m=1, tau=tau, T=T,
        phi=_nonexistence_phi,
        F0=F0, F0_x=zero_nn, F0_y=zero_nn, F1=F1, F1u_x=F1u_zero, F1u_y=F1u_zero,
        j=j, j_x=j_x, j_u=j_u, u_lo=[u_lo], u_hi=[u_hi],
        terminal=lambda x: weight * np.abs(np.asarray(x)[..., 0] - 2.0),
        terminal_x=lambda x: weight * np.sign(np.asarray(x) - 2.0),
        control_map=np.abs,
        control_map_du=np.sign,
        affine=AffineCoefficients(A=np.zeros((1, 1)), B=np.zeros((1, 1)), c=np.zeros(1), G=np.ones((1, 1))),
        params=dict(tau=tau, T=T, u_lo=u_lo, u_hi=u_hi, weight=weight),
    )


PROBLEMS: dict[str, Callable[..., ProblemDefinition]] = {
    "fig1_tracking": _fig1_tracking,
    "nonexistence_demo": _nonexistence_demo,
}


@dataclass(frozen=True)
class ProblemId:
    name: str
    overrides: dict = field(default_factory=dict)

    def with_overrides(self, **kw) -> "ProblemId":
        return replace(self, overrides={**self.overrides, **kw})


def build_problem(pid: ProblemId | str, **overrides) -> ProblemDefinition:
    if isinstance(pid, str):
        pid = ProblemId(pid)
    try:
        factory = PROBLEMS[pid.name]
    except KeyError:
        raise UnknownProblem(pid.name) from None
    kw = {**pid.overrides, **overrides}
    try:
        return factory(**kw)
    except TypeError as exc:
        raise ValueError(f"bad override for {pid.name}: {exc}") from None


def check_jacobians(problem: ProblemDefinition, n_samples: int = 100, h: float = 1e-6,
                    box: float = 10.0, seed: int = 0) -> float:
    """Largest relative error between supplied Jacobians and central differences.

    Errors are measured as ``|fd - J| / max(1, |J|)`` entrywise.
    """
    rng = np.random.default_rng(seed)
    n, m = problem.n, problem.m
    worst = 0.0

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if np.size(a) else 0.0

    for _ in range(n_samples):
        x = rng.uniform(-box, box, n)
        v = rng.uniform(-box, box, n)
        u = rng.uniform(-box, box, m)
        t = rng.uniform(0.0, problem.T)
        w = problem.effective_control(u)
        fd_x0, fd_y0, fd_x1, fd_y1 = (np.zeros((n, n)) for _ in range(4))
        fd_jx = np.zeros(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd_x0[:, i] = (problem.F0(x + e, v) - problem.F0(x - e, v)) / (2 * h)
            fd_y0[:, i] = (problem.F0(x, v + e) - problem.F0(x, v - e)) / (2 * h)
            fd_x1[:, i] = (problem.F1(x + e, v) @ w - problem.F1(x - e, v) @ w) / (2 * h)
            fd_y1[:, i] = (problem.F1(x, v + e) @ w - problem.F1(x, v - e) @ w) / (2 * h)
            fd_jx[i] = (problem.j(t, x + e, u) - problem.j(t, x - e, u)) / (2 * h)
        fd_ju = np.zeros(m)
        for i in range(m):
            e = np.zeros(m)
            e[i] = h
            fd_ju[i] = (problem.j(t, x, u + e) - problem.j(t, x, u - e)) / (2 * h)
        worst = max(
            worst,
            rel(fd_x0, problem.F0_x(x, v)),
            rel(fd_y0, problem.F0_y(x, v)),
            rel(fd_x1, problem.F1u_x(x, v, w)),
            rel(fd_y1, problem.F1u_y(x, v, w)),
            rel(fd_jx, problem.j_x(t, x, u)),
            rel(fd_ju, problem.j_u(t, x, u)),
        )
    return worst
