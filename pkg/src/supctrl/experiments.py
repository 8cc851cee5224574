"""Experiment runners, flat key=value configuration and file outputs.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment and dotted keys address nested settings::

    problem = fig1_tracking
    problem.alpha = 100
    dt = 1e-3
    k = 1e4
    optimizer.initial_step = abb
    output_dir = runs/fig1
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .adjoint import JumpRecord
from .dynamics import (
    evaluate_objective,
    integrate_hardmax,
    integrate_regularized,
    max_gronwall_bound,
    window_values,
)
from .optimizer import CONVERGED, OptimizerConfig, SolveReport, projected_gradient
from .problems import (
    NonCommensurateStep,
    ProblemDefinition,
    ProblemId,
    TimeGrid,
    UnknownProblem,
    build_problem,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentAssertion",
    "RunConfig",
    "NonexistenceTable",
    "KConvergenceRow",
    "parse_config_text",
    "load_config",
    "config_from_mapping",
    "default_config",
    "run_fig1",
    "run_nonexistence",
    "run_k_convergence",
    "run_gradcheck",
    "emit_plot_script",
    "write_solution_csv",
    "read_solution_csv",
    "write_jumps_csv",
    "sweep_threads",
]

FINE_SCALE = dict(dt=1e-4, k=1e6)


class ConfigError(ValueError):
    pass


class ExperimentAssertion(AssertionError):
    """A numerical claim checked by an experiment did not hold."""


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemId = field(default_factory=lambda: ProblemId("fig1_tracking"))
    dt: float = 1e-3
    k: float = 1e4
    # 1e-6 rather than 1e-8: near the optimum the Armijo decrease drops below the
    # rounding level of J before the projected gradient reaches 1e-8
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(max_iters=20000, initial_step="abb", tol_stationarity=1e-6))
    output_dir: Path = Path("runs")
    emit_plots: bool = True
    seed: int = 0
    frequencies: tuple = (10, 100, 1000, 10000)
    k_list: tuple = (10.0, 100.0, 1000.0, 10000.0)
    control_amplitude: float = 1.0
    control_frequency: float = 3.0

    def build(self) -> tuple[ProblemDefinition, TimeGrid]:
        """Problem and grid, with every invalid combination reported as :class:`ConfigError`."""
        try:
            problem = build_problem(self.problem)
            grid = problem.grid(self.dt)
        except UnknownProblem as exc:
            raise ConfigError(f"unknown problem {exc.args[0]!r}") from exc
        except (NonCommensurateStep, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ConfigError(f"k must be positive and finite, got {self.k}")
        return problem, grid


def default_config(kind: str = "fig1") -> RunConfig:
    """Defaults per experiment (``fig1``, ``nonexistence``, ``kconv``, ``gradcheck``)."""
    if kind == "fig1":
        return RunConfig(output_dir=Path("runs/fig1"))
    if kind == "nonexistence":
        return RunConfig(problem=ProblemId("nonexistence_demo"), dt=1e-5, output_dir=Path("runs/nonexistence"))
    if kind == "kconv":
        return RunConfig(output_dir=Path("runs/kconv"))
    if kind == "gradcheck":
        return RunConfig(dt=1e-2, k=1e3, output_dir=Path("runs/gradcheck"))
    raise ConfigError(f"unknown experiment {kind!r}")


# --- configuration text -------------------------------------------------------

def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        return tuple(_parse_value(part.strip()) for part in text.split(",") if part.strip())
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` pairs; later keys win, values are typed on a best-effort basis."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(parse_config_text(text), base)


_OPT_FIELDS = {f.name for f in fields(OptimizerConfig)}
_PLAIN = {
    "dt": float, "k": float, "seed": int, "emit_plots": bool, "output_dir": Path,
    "control.amplitude": float, "control.frequency": float,
}


def _as_tuple(value, conv):
    if not isinstance(value, tuple):
        value = (value,)
    return tuple(conv(v) for v in value)


def config_from_mapping(mapping: dict, base: Optional[RunConfig] = None) -> RunConfig:
    """Apply ``mapping`` (flat, dotted keys) on top of ``base``."""
    cfg = base or RunConfig()
    pid = cfg.problem
    opt = {}
    plain = {}
    try:
        for key, value in mapping.items():
            if key == "problem":
                pid = ProblemId(str(value), pid.overrides if str(value) == pid.name else {})
            elif key.startswith("problem."):
                pid = pid.with_overrides(**{key.split(".", 1)[1]: value})
            elif key.startswith("optimizer."):
                name = key.split(".", 1)[1]
                if name not in _OPT_FIELDS:
                    raise ConfigError(f"unknown optimizer setting {name!r}")
                opt[name] = value
            elif key == "frequencies":
                plain["frequencies"] = _as_tuple(value, int)
            elif key == "k_list":
                plain["k_list"] = _as_tuple(value, float)
            elif key in _PLAIN:
                conv = _PLAIN[key]
                if conv is bool and not isinstance(value, bool):
                    raise ConfigError(f"{key} must be true or false")
                plain[key.replace("control.", "control_")] = conv(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        optimizer = replace(cfg.optimizer, **opt) if opt else cfg.optimizer
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return replace(cfg, problem=pid, optimizer=optimizer, **plain)


# --- sweeps ---------------------------------------------------------------------

def sweep_threads(n_tasks: int) -> int:
    """Worker count for sweeps: ``SUPCTRL_THREADS`` if set, else the CPU count."""
    env = os.environ.get("SUPCTRL_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"SUPCTRL_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("SUPCTRL_THREADS must be at least 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def _map(fn: Callable, items: Sequence):
    workers = sweep_threads(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- files ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _columns(name: str, count: int) -> list[str]:
    return [name] if count == 1 else [f"{name}_{i + 1}" for i in range(count)]


def write_solution_csv(report: SolveReport, path) -> Path:
    """One row per forward node: ``t, u, x, lambda, dlambda`` (17 significant digits)."""
    path = Path(path)
    grid = report.state.grid
    u = report.control.values
    x = report.state.forward
    lam = report.adjoint.lam.values
    dl = report.adjoint.dlambda.values
    m, n = u.shape[1], x.shape[1]
    header = ["t"] + _columns("u", m) + _columns("x", n) + _columns("lambda", n) + _columns("dlambda", n)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, t in enumerate(grid.t_fwd):
            w.writerow([_fmt(t)] + [_fmt(v) for v in np.concatenate([u[j], x[j], lam[j], dl[j]])])
    return path


def read_solution_csv(path) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_solution_csv`: column name to array."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, c] for c, name in enumerate(header)}


def write_jumps_csv(jumps: Iterable[JumpRecord], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "time", "magnitude", "predicted", "relative_gap", "interval_start", "interval_end"])
        for r in jumps:
            lo, hi = r.argmax_interval or (float("nan"), float("nan"))
            w.writerow([r.component, _fmt(r.time), _fmt(r.magnitude), _fmt(r.predicted),
                        _fmt(r.relative_gap), _fmt(lo), _fmt(hi)])
    return path


def _jump_table(jumps: Sequence[JumpRecord]) -> list[str]:
    if not jumps:
        return ["jumps: none"]
    lines = [f"jumps: {len(jumps)}",
             f"  {'comp':>4} {'time':>10} {'magnitude':>14} {'predicted':>14} {'rel.gap':>9}"]
    for r in jumps:
        lines.append(f"  {r.component:>4d} {r.time:>10.4f} {r.magnitude:>14.6e} {r.predicted:>14.6e} {r.relative_gap:>9.2%}")
    return lines


def write_summary(report: SolveReport, config: RunConfig, path) -> Path:
    path = Path(path)
    over = ", ".join(f"{k}={v}" for k, v in sorted(config.problem.overrides.items())) or "none"
    lines = [
        f"problem: {config.problem.name} (overrides: {over})",
        f"dt: {config.dt:g}",
        f"k: {config.k:g}",
        f"termination: {report.termination}",
        f"iterations: {report.iterations}",
        f"forward_solves: {report.forward_solves}",
        f"objective: {_fmt(report.objective)}",
        f"stationarity: {report.stationarity:.6e}",
        f"elapsed_s: {report.elapsed:.2f}",
        *_jump_table(report.jumps),
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


_PLOT_HEAD = """\
# four panels: control, state, adjoint and its forward difference
set datafile separator ','
set terminal pngcairo size 1200,900
set output '{png}'
set multiplot layout 2,2
set key off
set xlabel 't'
"""

_PANEL = """\
set title '{title}'
plot '{csv}' using 1:{col} every ::1 with lines lw 1.5
"""


def emit_plot_script(report: SolveReport, output_dir, csv_name: str = "solution.csv",
                     png_name: str = "fig1.png") -> Path:
    """Write ``plot.gp`` (gnuplot) rendering u, x, lambda and dlambda from the solution CSV.

    Detected jump times are marked with dashed vertical lines on the two adjoint
    panels.  The output depends only on the CSV name and the report.
    """
    out = Path(output_dir)
    if not (out / csv_name).exists():
        raise FileNotFoundError(f"{out / csv_name} not found; write the solution CSV first")
    m = report.control.values.shape[1]
    n = report.state.values.shape[1]
    cols = {"u": 2, "x": 2 + m, "lambda": 2 + m + n, "dlambda": 2 + m + 2 * n}
    text = _PLOT_HEAD.format(png=png_name)
    for name in ("u", "x", "lambda", "dlambda"):
        if name in ("lambda", "dlambda"):
            for r in report.jumps:
                text += f"set arrow from {_fmt(r.time)}, graph 0 to {_fmt(r.time)}, graph 1 nohead dt 2\n"
        text += _PANEL.format(title=name, csv=csv_name, col=cols[name])
        if name in ("lambda", "dlambda") and report.jumps:
            text += "unset arrow\n"
    text += "unset multiplot\n"
    path = out / "plot.gp"
    path.write_text(text)
    return path


# --- experiments ------------------------------------------------------------------

def run_fig1(config: RunConfig, write: bool = True) -> SolveReport:
    """Optimise the tracking problem from ``u = 0`` and write the solution files."""
    if config.problem.name != "fig1_tracking":
        raise ConfigError("run_fig1 needs problem = fig1_tracking")
    problem, grid = config.build()
    report = projected_gradient(problem, config.k, grid, config.optimizer)
    log.info("fig1: %s after %d iterations, J=%.10g, stationarity=%.3e",
             report.termination, report.iterations, report.objective, report.stationarity)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_solution_csv(report, out / "solution.csv")
        write_jumps_csv(report.jumps, out / "jumps.csv")
        write_summary(report, config, out / "summary.txt")
        if config.emit_plots:
            emit_plot_script(report, out)
    return report


@dataclass(frozen=True)
class NonexistenceTable:
    frequencies: tuple
    objectives: tuple
    reference_u1: float
    reference_u3: float
    infimum: float = 1.0


def _chattering_control(kappa: float, grid: TimeGrid) -> np.ndarray:
    return (1.0 + 2.0 * np.sign(np.sin(kappa * grid.t_fwd)))[:, None]


def _objective_of(problem: ProblemDefinition, grid: TimeGrid, u: np.ndarray) -> float:
    fwd = integrate_hardmax(problem, u, grid)
    return evaluate_objective(problem, fwd, u)


def run_nonexistence(config: RunConfig, frequencies: Optional[Sequence[int]] = None,
                     write: bool = True) -> NonexistenceTable:
    """Objectives of ``u = 1 + 2 sign(sin(kappa t))`` for growing ``kappa``.

    The values must stay above the infimum 1 and decrease towards it; a
    violation raises :class:`ExperimentAssertion`.
    """
    if config.problem.name != "nonexistence_demo":
        raise ConfigError("run_nonexistence needs problem = nonexistence_demo")
    problem, grid = config.build()
    freqs = tuple(int(f) for f in (frequencies if frequencies is not None else config.frequencies))
    if not freqs:
        raise ConfigError("no frequencies given")
    objectives = tuple(_map(lambda kap: _objective_of(problem, grid, _chattering_control(kap, grid)), freqs))
    ones = np.ones((grid.n_fwd + 1, 1))
    table = NonexistenceTable(freqs, objectives, _objective_of(problem, grid, ones),
                              _objective_of(problem, grid, 3.0 * ones))
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "nonexistence.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kappa", "objective"])
            for kap, J in zip(freqs, objectives):
                w.writerow([kap, _fmt(J)])
            w.writerow(["u=1", _fmt(table.reference_u1)])
            w.writerow(["u=3", _fmt(table.reference_u3)])
    bad = [(kap, J) for kap, J in zip(freqs, objectives) if not J > table.infimum]
    if bad:
        raise ExperimentAssertion(f"objective at or below the infimum 1: {bad}")
    if any(b >= a for a, b in zip(objectives, objectives[1:])):
        raise ExperimentAssertion(f"objectives do not decrease strictly: {objectives}")
    return table


@dataclass(frozen=True)
class KConvergenceRow:
    k: float
    state_gap: float  # sup norm of x_k - x over the forward nodes
    lie_gap: float  # dt * sum |LIE - window max| along x_k
    envelope: float  # (2 |log tau| / k) * exp(2 L T)


def _kconv_control(config: RunConfig, problem: ProblemDefinition, grid: TimeGrid) -> np.ndarray:
    u = config.control_amplitude * np.sin(config.control_frequency * grid.t_fwd)
    return np.clip(u, problem.u_lo, problem.u_hi)[:, None]


def run_k_convergence(config: RunConfig, k_list: Optional[Sequence[float]] = None,
                      lipschitz: float = 3.0, write: bool = True) -> list[KConvergenceRow]:
    """Regularized versus hard-max solves for a fixed control and increasing ``k``.

    Raises :class:`ExperimentAssertion` unless both gap columns decrease strictly.
    """
    problem, grid = config.build()
    ks = tuple(float(k) for k in (k_list if k_list is not None else config.k_list))
    if not ks:
        raise ConfigError("empty k list")
    if any(not (k > 0 and math.isfinite(k)) for k in ks):
        raise ConfigError("every k must be positive and finite")
    u = _kconv_control(config, problem, grid)
    hard = integrate_hardmax(problem, u, grid)

    def one(k):
        reg = integrate_regularized(problem, u, k, grid, cache_weights=False)
        gap = float(np.max(np.abs(reg.x_fwd - hard.x_fwd)))
        vmax = window_values(reg.state.values, grid, "hard")
        lie_gap = grid.dt * float(np.sum(np.abs(reg.aux_v - vmax)))
        env = float(max_gronwall_bound(2.0 * abs(math.log(problem.tau)) / k, lipschitz, problem.T))
        return KConvergenceRow(k, gap, lie_gap, env)

    rows = _map(one, ks)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "kconv.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "state_gap", "lie_gap", "envelope"])
            for r in rows:
                w.writerow([_fmt(r.k), _fmt(r.state_gap), _fmt(r.lie_gap), _fmt(r.envelope)])
    for name in ("state_gap", "lie_gap"):
        col = [getattr(r, name) for r in rows]
        if any(b >= a for a, b in zip(col, col[1:])):
            raise ExperimentAssertion(f"{name} does not decrease strictly over k={ks}: {col}")
    return rows


def run_gradcheck(config: RunConfig, n_checks: int = 20, h: float = 1e-6,
                  tol: float = 1e-6, write: bool = True) -> np.ndarray:
    """Central-difference directional derivatives against the adjoint gradient.

    Random controls and directions come from ``config.seed``.  Returns the
    relative errors and raises :class:`ExperimentAssertion` if any exceeds ``tol``.
    """
    from .adjoint import gradient_check

    problem, grid = config.build()
    errors = gradient_check(problem, config.k, grid, n_checks=n_checks, h=h, seed=config.seed)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "gradcheck.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "relative_error"])
            for i, e in enumerate(errors):
                w.writerow([i, _fmt(e)])
    worst = float(np.max(errors))
    if not worst < tol:
        raise ExperimentAssertion(f"gradient check failed: worst relative error {worst:.3e} >= {tol:g}")
    return errors


def converged(report: SolveReport) -> bool:
    return report.termination == CONVERGED
