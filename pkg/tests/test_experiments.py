import math
from pathlib import Path

import numpy as np
import pytest

from supctrl import cli
from supctrl.experiments import (
    ConfigError,
    ExperimentAssertion,
    RunConfig,
    config_from_mapping,
    default_config,
    emit_plot_script,
    load_config,
    parse_config_text,
    read_solution_csv,
    run_fig1,
    run_gradcheck,
    run_k_convergence,
    run_nonexistence,
    sweep_threads,
    write_solution_csv,
)
from supctrl.problems import ProblemId


def test_parse_config_text():
    cfg = parse_config_text("""
        # comment
        dt = 1e-2
        seed = 3
        emit_plots = false
        frequencies = 10, 100
        problem = fig1_tracking   # trailing comment
        problem.alpha = 50
    """)
    assert cfg == {"dt": 0.01, "seed": 3, "emit_plots": False, "frequencies": (10, 100),
                   "problem": "fig1_tracking", "problem.alpha": 50}


@pytest.mark.parametrize("text", ["dt 0.1", "= 3"])
def test_parse_config_text_rejects(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dt = 0.01\nk = 500\noptimizer.max_iters = 7\nproblem.beta = 0.5\n"
                    "k_list = 10\ncontrol.frequency = 2\noutput_dir = somewhere\n")
    cfg = load_config(path, default_config("fig1"))
    assert cfg.dt == 0.01 and cfg.k == 500.0
    assert cfg.optimizer.max_iters == 7 and cfg.optimizer.initial_step == "abb"
    assert cfg.problem == ProblemId("fig1_tracking", {"beta": 0.5})
    assert cfg.k_list == (10.0,) and cfg.control_frequency == 2.0
    assert cfg.output_dir == Path("somewhere")
    problem, grid = cfg.build()
    assert problem.params["beta"] == 0.5 and grid.n_fwd == 300


@pytest.mark.parametrize("mapping", [
    {"colour": "red"}, {"optimizer.foo": 1}, {"emit_plots": 3}, {"dt": "fast"},
    {"optimizer.backtrack": 2.0},
])
def test_config_errors(mapping):
    with pytest.raises(ConfigError):
        config_from_mapping(mapping)


@pytest.mark.parametrize("cfg", [
    RunConfig(dt=0.3), RunConfig(k=-1.0), RunConfig(problem=ProblemId("nope")),
    RunConfig(problem=ProblemId("fig1_tracking", {"gamma": 1})),
])
def test_build_errors(cfg):
    with pytest.raises(ConfigError):
        cfg.build()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_solution_csv_round_trip(fig1_report, tmp_path):
    path = write_solution_csv(fig1_report, tmp_path / "solution.csv")
    cols = read_solution_csv(path)
    assert list(cols) == ["t", "u", "x", "lambda", "dlambda"]
    np.testing.assert_array_equal(cols["t"], fig1_report.control.grid.t_fwd)
    np.testing.assert_array_equal(cols["u"], fig1_report.control.values[:, 0])
    np.testing.assert_array_equal(cols["x"], fig1_report.state.forward[:, 0])
    np.testing.assert_array_equal(cols["lambda"], fig1_report.adjoint.lam.values[:, 0])
    np.testing.assert_array_equal(cols["dlambda"], fig1_report.adjoint.dlambda.values[:, 0])


def test_plot_script(fig1_report, tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plot_script(fig1_report, tmp_path)
    write_solution_csv(fig1_report, tmp_path / "solution.csv")
    text = emit_plot_script(fig1_report, tmp_path).read_text()
    assert emit_plot_script(fig1_report, tmp_path).read_text() == text
    assert text.count("set multiplot layout 2,2") == 1
    for col in (2, 3, 4, 5):
        assert f"using 1:{col} " in text
    # one dashed marker per jump on each of the two adjoint panels
    assert sum(line.startswith("set arrow") for line in text.splitlines()) == 2 * len(fig1_report.jumps)


def test_untracked_problem_is_trivial(tmp_path):
    cfg = config_from_mapping({"problem.alpha": 0, "dt": 0.01, "k": 1000, "output_dir": str(tmp_path)},
                              default_config("fig1"))
    rep = run_fig1(cfg)
    assert rep.termination == "Converged" and rep.iterations == 0
    np.testing.assert_array_equal(rep.control.values, 0.0)
    np.testing.assert_array_equal(rep.adjoint.lam.values, 0.0)
    # the smoothed window value is offset by O(1/k) from the true maximum, so x is only near zero
    assert np.abs(rep.state.values).max() <= 10 * 2 * abs(math.log(0.2)) / 1000 * math.exp(3.0 * 3.0)
    assert rep.jumps == []
    assert "set arrow" not in (tmp_path / "plot.gp").read_text()
    assert (tmp_path / "jumps.csv").read_text().count("\n") == 1
    assert "jumps: none" in (tmp_path / "summary.txt").read_text()


def test_run_fig1_rejects_other_problem():
    with pytest.raises(ConfigError):
        run_fig1(default_config("nonexistence"), write=False)


def test_nonexistence_table(tmp_path):
    cfg = config_from_mapping({"output_dir": str(tmp_path)}, default_config("nonexistence"))
    table = run_nonexistence(cfg)
    assert table.reference_u3 == pytest.approx(22 / 3, abs=1e-3)
    assert table.reference_u1 == pytest.approx(16 / 3, abs=1e-3)
    J = table.objectives
    assert all(j > 1 for j in J) and all(b < a for a, b in zip(J, J[1:]))
    assert J[-1] - 1 < 0.01
    lines = (tmp_path / "nonexistence.csv").read_text().splitlines()
    assert lines[0] == "kappa,objective" and len(lines) == 1 + len(J) + 2


def test_nonexistence_assertion():
    cfg = config_from_mapping({"dt": 1e-3}, default_config("nonexistence"))
    with pytest.raises(ExperimentAssertion):
        run_nonexistence(cfg, frequencies=(1000, 10), write=False)


def test_k_convergence_rows(tmp_path):
    cfg = config_from_mapping({"output_dir": str(tmp_path)}, default_config("kconv"))
    rows = run_k_convergence(cfg)
    assert [r.k for r in rows] == [10.0, 100.0, 1000.0, 10000.0]
    for r in rows:
        assert r.envelope == pytest.approx(2 * abs(math.log(0.2)) / r.k * math.exp(2 * 3.0 * 3.0))
        assert r.state_gap <= r.envelope
    assert (tmp_path / "kconv.csv").exists()
    with pytest.raises(ConfigError):
        run_k_convergence(cfg, k_list=(10.0, 0.0), write=False)


def test_gradcheck_experiment():
    errors = run_gradcheck(default_config("gradcheck"), write=False)
    assert errors.shape == (20,) and errors.max() < 1e-6
    with pytest.raises(ExperimentAssertion):
        run_gradcheck(default_config("gradcheck"), n_checks=2, tol=0.0, write=False)


def test_sweep_threads(monkeypatch):
    monkeypatch.setenv("SUPCTRL_THREADS", "2")
    assert sweep_threads(10) == 2 and sweep_threads(1) == 1
    cfg = config_from_mapping({"dt": 1e-2}, default_config("kconv"))
    parallel = run_k_convergence(cfg, write=False)
    monkeypatch.setenv("SUPCTRL_THREADS", "1")
    assert run_k_convergence(cfg, write=False) == parallel
    for bad in ("0", "many"):
        monkeypatch.setenv("SUPCTRL_THREADS", bad)
        with pytest.raises(ConfigError):
            sweep_threads(4)


# --- command line -------------------------------------------------------------------

def test_cli_gradcheck(capsys, tmp_path):
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
    assert "20 checks" in capsys.readouterr().out


def test_cli_fig1_coarse(capsys, tmp_path):
    code = cli.main(["fig1", "--dt", "0.01", "--k", "1000", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "termination: Converged" in out
    assert {p.name for p in tmp_path.iterdir()} == {"solution.csv", "jumps.csv", "summary.txt", "plot.gp"}


def test_cli_not_converged(tmp_path):
    cfg = tmp_path / "short.cfg"
    cfg.write_text("optimizer.max_iters = 2\nemit_plots = false\n")
    code = cli.main(["fig1", "--config", str(cfg), "--dt", "0.01", "--k", "1000", "--out", str(tmp_path)])
    assert code == 1
    assert not (tmp_path / "plot.gp").exists()


def test_cli_assertion_exit(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dt = 1e-3\nfrequencies = 1000, 10\n")
    assert cli.main(["nonexistence", "--config", str(cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("argv", [
    ["fig1", "--dt", "0.3"],
    ["kconv", "--k", "-5"],
    ["fig1", "--config", "/nonexistent/run.cfg"],
])
def test_cli_config_exit(argv, capsys):
    assert cli.main(argv) == 3
    assert "configuration error" in capsys.readouterr().err


def test_cli_thread_env_error(monkeypatch, tmp_path):
    monkeypatch.setenv("SUPCTRL_THREADS", "0")
    assert cli.main(["kconv", "--dt", "0.01", "--out", str(tmp_path)]) == 3


def test_cli_fine_scale_precedence(tmp_path):
    args = cli.build_parser().parse_args(["fig1", "--paper-scale", "--dt", "0.01", "--out", str(tmp_path)])
    cfg = cli.resolve_config(args)
    assert cfg.dt == 0.01 and cfg.k == 1e6 and cfg.output_dir == tmp_path
