import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from sgflow.cli import cli
from sgflow.tools.output import read_trajectory_csv

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"
X_STAR = [0.25, 0.25]


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.setenv("SGFLOW_THREADS", "2")
    return CliRunner()


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestProblems:
    def test_lists_corpus(self, runner):
        result = runner.invoke(cli, ["problems"])
        assert result.exit_code == 0
        assert "fig3" in result.output
        assert "random-qp" in result.output


class TestFlow:
    """sgflow flow"""

    def test_converges(self, runner, tmp_path):
        out = tmp_path / "traj.csv"
        result = runner.invoke(cli, ["flow", "--problem", "fig3", "--x0=-0.75,0.1", "--stepper", "rk4:1e-2",
                                     "--T", "60", "--eps-conv", "1e-6", "--out", str(out)])
        assert result.exit_code == 0, result.output
        traj = read_trajectory_csv(out)
        assert traj["status"][-1] == "Converged"
        assert set(traj["status"][:-1]) <= {"Running"}
        np.testing.assert_allclose(traj["states"][-1], X_STAR, atol=1e-5)
        summary = json.loads(out.with_suffix(".json").read_text())
        assert summary["status"] == "Converged"
        assert summary["method"] == "sgf"
        assert summary["distance_to_kkt"] < 1e-5

    def test_start_at_kkt_point(self, runner, tmp_path):
        out = tmp_path / "traj.csv"
        result = runner.invoke(cli, ["flow", "--problem", "fig3", "--x0", "0.25,0.25", "--out", str(out)])
        assert result.exit_code == 0, result.output
        traj = read_trajectory_csv(out)
        assert len(traj["times"]) == 1
        assert traj["status"][0] == "Converged"

    def test_separate_summary_path(self, runner, tmp_path):
        out, summary = tmp_path / "traj.csv", tmp_path / "run" / "summary.json"
        summary.parent.mkdir()
        result = runner.invoke(cli, ["flow", "--problem", "jacobian-1d", "--x0=-0.5", "--stepper", "euler:0.1",
                                     "--T", "5", "--out", str(out), "--summary", str(summary)])
        assert result.exit_code == 0, result.output
        assert json.loads(summary.read_text())["problem"] == "jacobian-1d"
        assert not out.with_suffix(".json").exists()

    def test_barrier_undefined_at_infeasible_start(self, runner, tmp_path):
        result = runner.invoke(cli, ["flow", "--problem", "fig3", "--method", "log-barrier",
                                     "--out", str(tmp_path / "traj.csv")])
        assert result.exit_code == 3

    @pytest.mark.parametrize("args", [
        ["--problem", "no-such-problem"],
        ["--problem", "fig3", "--stepper", "rk5:0.1"],
        ["--problem", "fig3", "--x0", "1,2,3"],
        ["--problem", "fig3", "--method", "newton"],
        ["--problem", "fig3", "--alpha=-1"],
    ])
    def test_usage_errors(self, runner, tmp_path, args):
        result = runner.invoke(cli, ["flow", *args, "--out", str(tmp_path / "traj.csv")])
        assert result.exit_code == 2

    def test_problem_file(self, runner, tmp_path):
        out = tmp_path / "traj.csv"
        result = runner.invoke(cli, ["flow", "--problem", str(PROBLEMS / "fig3.json"), "--stepper", "rk4:1e-2",
                                     "--T", "60", "--eps-conv", "1e-6", "--out", str(out)])
        assert result.exit_code == 0, result.output
        traj = read_trajectory_csv(out)
        np.testing.assert_allclose(traj["states"][0], [0.1, 0.6])
        np.testing.assert_allclose(traj["states"][-1], X_STAR, atol=1e-5)
        summary = json.loads(out.with_suffix(".json").read_text())
        assert summary["problem"] == "fig3-file"
        assert summary["distance_to_kkt"] is None

    def test_nonlinear_problem_file(self, runner, tmp_path):
        out = tmp_path / "traj.csv"
        result = runner.invoke(cli, ["flow", "--problem", str(PROBLEMS / "disk-qp.json"), "--stepper", "rk4:1e-2",
                                     "--T", "60", "--eps-conv", "1e-6", "--out", str(out)])
        assert result.exit_code == 0, result.output
        traj = read_trajectory_csv(out)
        np.testing.assert_allclose(traj["states"][-1], [0.5 ** 0.5, 0.5 ** 0.5], atol=1e-5)
        assert np.all(traj["max_g"] <= 1e-6)

    def test_invalid_problem_file(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = runner.invoke(cli, ["flow", "--problem", str(bad), "--x0", "0,0"])
        assert result.exit_code == 4

    def test_missing_problem_file(self, runner, tmp_path):
        result = runner.invoke(cli, ["flow", "--problem", str(tmp_path / "missing.json"), "--x0", "0,0"])
        assert result.exit_code == 4


class TestCompare:
    """sgflow compare"""

    def test_fig3(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", "--problem", "fig3", "--methods", "sgf,globally-projected,l2-penalty",
                                     "--stepper", "rk4:1e-2", "--T", "30", "--out-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "comparison.json").read_text())
        rows = {row["method"]: row for row in payload["methods"]}
        assert set(rows) == {"sgf", "globally-projected", "l2-penalty"}
        assert rows["sgf"]["invariance_margin"] <= 1e-6
        assert rows["sgf"]["distance_to_kkt"] < 1e-4
        assert rows["l2-penalty"]["invariance_margin"] > 0
        for name in rows:
            assert (tmp_path / f"{name}.csv").exists()
            assert rows[name]["trajectory_file"] == f"{name}.csv"

    def test_all_methods_on_fig3(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", "--problem", "fig3", "--stepper", "rk4:1e-2", "--T", "30",
                                     "--out-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = {row["method"]: row for row in json.loads((tmp_path / "comparison.json").read_text())["methods"]}
        assert set(rows) == {"sgf", "projected-gradient", "log-barrier", "l2-penalty",
                             "saddle-point", "globally-projected"}
        assert rows["sgf"]["invariance_margin"] <= 1e-6
        assert rows["sgf"]["distance_to_kkt"] < 1e-4
        assert rows["globally-projected"]["distance_to_kkt"] < 1e-4
        assert rows["l2-penalty"]["invariance_margin"] > 1e-3
        assert rows["saddle-point"]["invariance_margin"] > 1e-3
        for name in rows:
            assert (tmp_path / f"{name}.csv").exists()

    def test_log_barrier_approaches_kkt_point_as_mu_shrinks(self, runner, tmp_path):
        distances = []
        for mu in ("1e-1", "1e-2", "1e-3"):
            out_dir = tmp_path / mu
            result = runner.invoke(cli, ["compare", "--problem", "fig3", "--methods", "log-barrier", "--mu", mu,
                                         "--stepper", "adaptive", "--T", "50", "--out-dir", str(out_dir)])
            assert result.exit_code == 0, result.output
            row = json.loads((out_dir / "comparison.json").read_text())["methods"][0]
            assert row["invariance_margin"] < 0
            distances.append(row["distance_to_kkt"])
        assert distances[0] > distances[1] > distances[2]
        assert distances[2] < 1e-2

    def test_repeated_method_keeps_every_trajectory(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", "--problem", "fig3", "--methods", "sgf,sgf:dual,sgf",
                                     "--stepper", "rk4:1e-2", "--T", "1", "--out-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = json.loads((tmp_path / "comparison.json").read_text())["methods"]
        assert [row["method"] for row in rows] == ["sgf", "sgf:dual", "sgf"]
        assert [row["trajectory_file"] for row in rows] == ["sgf.csv", "sgf-dual.csv", "sgf-2.csv"]
        for row in rows:
            assert len(_read_csv(tmp_path / row["trajectory_file"])) > 1

    def test_unsupported_row(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", "--problem", "circle-complement",
                                     "--methods", "sgf,globally-projected", "--stepper", "rk4:1e-2",
                                     "--T", "5", "--out-dir", str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = {row["method"]: row for row in json.loads((tmp_path / "comparison.json").read_text())["methods"]}
        assert rows["globally-projected"]["status"] == "unsupported"
        assert rows["globally-projected"]["reason"]
        assert rows["sgf"]["status"] in ("Converged", "HorizonReached")

    def test_empty_method_list(self, runner, tmp_path):
        result = runner.invoke(cli, ["compare", "--problem", "fig3", "--methods", ",", "--out-dir", str(tmp_path)])
        assert result.exit_code == 2


class TestAnalyze:
    """sgflow analyze"""

    def _analyze(self, runner, tmp_path, *args):
        out = tmp_path / "analysis.json"
        result = runner.invoke(cli, ["analyze", *args, "--out", str(out)])
        assert result.exit_code == 0, result.output
        return json.loads(out.read_text())

    def test_kkt_point(self, runner, tmp_path):
        report = self._analyze(runner, tmp_path, "--problem", "fig3", "--x", "0.25,0.25")
        assert report["multipliers"] == "dual-qp"
        assert report["kkt"]["is_kkt"]
        assert report["cq"]["licq"]
        np.testing.assert_allclose(report["jacobian"]["eigenvalues"], [[-1.0, 0.0], [-0.5, 0.0]], atol=1e-10)
        assert report["jacobian"]["r"] == 1
        assert report["alpha_lower_bound"] == pytest.approx(0.5)
        np.testing.assert_allclose(report["flow"]["xi"], [0.0, 0.0], atol=1e-10)

    def test_given_multipliers(self, runner, tmp_path):
        report = self._analyze(runner, tmp_path, "--problem", "fig3", "--x", "0,0", "--u", "0,0")
        assert report["multipliers"] == "given"
        assert report["kkt"]["stationarity_residual"] == pytest.approx(0.5)
        assert report["jacobian_skipped"] == "not a KKT point"
        np.testing.assert_allclose(report["flow"]["xi"], [0.125, 0.125], atol=1e-10)

    def test_remark_problem(self, runner, tmp_path):
        report = self._analyze(runner, tmp_path, "--problem", "remark-multipliers", "--x", "0,0")
        assert report["kkt"]["is_kkt"]
        np.testing.assert_allclose(report["kkt"]["u"], [0.0, 0.0], atol=1e-10)
        np.testing.assert_allclose(report["jacobian"]["eigenvalues"], [[-2.0, 0.0], [-2.0, 0.0]], atol=1e-10)
        np.testing.assert_allclose(report["feedback"]["xi"], [0.0, 0.0], atol=1e-10)

    def test_wrong_multiplier_count(self, runner, tmp_path):
        result = runner.invoke(cli, ["analyze", "--problem", "fig3", "--x", "0,0", "--u", "1"])
        assert result.exit_code == 2

    def test_nonpositive_alpha(self, runner):
        result = runner.invoke(cli, ["analyze", "--problem", "fig3", "--x", "0,0", "--alpha", "0"])
        assert result.exit_code == 2


class TestSweep:
    """sgflow sweep"""

    def test_alpha(self, runner, tmp_path):
        out = tmp_path / "alpha.csv"
        result = runner.invoke(cli, ["sweep", "--problem", "fig3", "--kind", "alpha", "--grid", "1,10,100,1000",
                                     "--x", "0,0.001", "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = _read_csv(out)
        errors = [float(row["error"]) for row in rows]
        assert len(errors) == 4
        assert all(a > b for a, b in zip(errors, errors[1:]))
        assert errors[0] == pytest.approx(0.7495 / np.sqrt(2.0))

    def test_alpha_on_boundary_points(self, runner, tmp_path):
        """Five points on x1 = 0 and five on x1 = x2."""
        points = [f"0,{s}" for s in ("0.001", "0.01", "0.1", "0.3", "0.5")]
        points += [f"{s},{s}" for s in ("0.05", "0.1", "0.25", "0.5", "1")]
        out = tmp_path / "alpha.csv"
        args = ["sweep", "--problem", "fig3", "--kind", "alpha", "--grid", "1,10,100,1000", "--out", str(out)]
        for x in points:
            args += ["--x", x]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        rows = _read_csv(out)
        assert len(rows) == 40
        for index in range(10):
            errors = [float(row["error"]) for row in rows if int(row["point"]) == index]
            assert len(errors) == 4
            assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
            assert errors[-1] < 1e-2

    def test_alpha_needs_feasible_points(self, runner):
        result = runner.invoke(cli, ["sweep", "--problem", "fig3", "--kind", "alpha", "--grid", "1",
                                     "--x=-0.75,0.1"])
        assert result.exit_code == 2

    def test_stepsize(self, runner, tmp_path):
        out = tmp_path / "steps.csv"
        result = runner.invoke(cli, ["sweep", "--problem", "jacobian-1d", "--kind", "stepsize", "--grid", "1,2",
                                     "--h-grid", "1.5,0.9,0.5,0.1", "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = _read_csv(out)
        assert [float(row["h_star"]) for row in rows] == [0.9, 0.5]
        assert [float(row["h_star_times_alpha"]) for row in rows] == pytest.approx([0.9, 1.0])

    def test_empty_grid(self, runner):
        result = runner.invoke(cli, ["sweep", "--problem", "fig3", "--kind", "alpha", "--grid", ""])
        assert result.exit_code == 2
