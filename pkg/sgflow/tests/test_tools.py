import io
import json
import logging

import numpy as np
import pytest

from sgflow.config import Settings, load_settings, thread_count
from sgflow.flows import FlowSpec
from sgflow.integrate import StepperSpec, integrate
from sgflow.tools.common import ProblemSource, UsageError, parse_grid, parse_vector, resolve_problem
from sgflow.tools.output import json_text, read_trajectory_csv, trajectory_csv_text, write_trajectory_csv
from sgflow.tools.problem_file import ProblemFileError, load_problem_file, parse_problem
from sgflow.utils.logging import SGFlowLoggerSetup, get_log_level

BOX = {
    "name": "box",
    "n": 2,
    "objective": {"H": [[1.0, 0.0], [0.0, 1.0]], "c": [-3.0, 0.0]},
    "inequalities": [{"a": [1.0, 0.0], "b": 1.0}],
    "x0": [0.0, 0.0],
}


class TestProblemFile:
    def test_parse(self):
        problem, x0 = parse_problem(BOX)
        assert problem.name == "box"
        assert (problem.n, problem.m, problem.k) == (2, 1, 0)
        assert problem.affine_constraints
        np.testing.assert_allclose(x0, [0.0, 0.0])
        assert problem.objective(np.array([1.0, 0.0])) == pytest.approx(-2.5)
        np.testing.assert_allclose(problem.ineq(np.array([3.0, 0.0])), [2.0])

    def test_quadratic_constraint(self):
        data = dict(BOX, inequalities=[{"a": [0.0, 0.0], "b": 1.0, "S": [[2.0, 0.0], [0.0, 2.0]]}])
        problem, _ = parse_problem(data)
        assert not problem.affine_constraints
        np.testing.assert_allclose(problem.ineq(np.array([1.0, 1.0])), [1.0])

    def test_asymmetric_matrix_is_symmetrized(self, caplog):
        data = dict(BOX, objective={"H": [[1.0, 2.0], [0.0, 1.0]], "c": [0.0, 0.0]})
        with caplog.at_level(logging.WARNING):
            problem, _ = parse_problem(data)
        assert "asymmetric" in caplog.text
        np.testing.assert_allclose(problem.gradient(np.array([1.0, 0.0])), [1.0, 1.0])

    @pytest.mark.parametrize("change", [
        {"n": 0},
        {"n": "two"},
        {"objective": {"H": [[1.0]], "c": [0.0, 0.0]}},
        {"objective": {"c": [0.0, float("nan")]}},
        {"inequalities": [{"b": 1.0}]},
        {"inequalities": [{"a": [1.0, 0.0], "weight": 2.0}]},
        {"x0": [0.0]},
    ])
    def test_invalid(self, change):
        with pytest.raises(ProblemFileError):
            parse_problem(dict(BOX, **change))

    def test_load_uses_file_stem(self, tmp_path):
        path = tmp_path / "unnamed.json"
        path.write_text(json.dumps({k: v for k, v in BOX.items() if k != "name"}))
        problem, _ = load_problem_file(path)
        assert problem.name == "unnamed"

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("[1, 2")
        with pytest.raises(ProblemFileError):
            load_problem_file(path)


class TestCommon:
    def test_parse_vector(self):
        np.testing.assert_allclose(parse_vector("1, 2.5,-3"), [1.0, 2.5, -3.0])
        assert parse_vector(None) is None
        with pytest.raises(UsageError):
            parse_vector("1,a")
        with pytest.raises(UsageError):
            parse_vector(",")

    def test_parse_grid(self):
        assert parse_grid("1,10") == [1.0, 10.0]
        with pytest.raises(UsageError):
            parse_grid("1,-2")
        with pytest.raises(UsageError):
            parse_grid("")

    def test_resolve_corpus_and_file(self, tmp_path):
        source = resolve_problem("fig3")
        assert source.entry is not None
        np.testing.assert_allclose(source.start(None), [-0.75, 0.1])
        np.testing.assert_allclose(source.start(None, feasible=True), [0.1, 0.6])
        assert source.distance_to_kkt(np.array([0.25, 0.25])) == pytest.approx(0.0)

        path = tmp_path / "box.json"
        path.write_text(json.dumps(BOX))
        from_file = resolve_problem(str(path))
        assert from_file.entry is None
        assert from_file.known_kkt == ()
        assert from_file.distance_to_kkt(np.zeros(2)) is None
        np.testing.assert_allclose(from_file.start(None), [0.0, 0.0])

    def test_no_default_start(self):
        problem, _ = parse_problem({k: v for k, v in BOX.items() if k != "x0"})
        with pytest.raises(UsageError):
            ProblemSource(problem=problem).start(None)


class TestOutput:
    def test_trajectory_csv(self, fig3, tmp_path):
        traj = integrate(FlowSpec(), fig3.problem, fig3.feasible_x0, StepperSpec.parse("rk4:0.1", horizon=1.0))
        text = trajectory_csv_text(traj)
        assert text.splitlines()[0] == "t,x_1,x_2,f,speed,max_g,norm_h,status"
        assert "\r" not in text

        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        data = read_trajectory_csv(path)
        np.testing.assert_array_equal(data["states"], traj.states)
        np.testing.assert_array_equal(data["times"], traj.times)
        assert data["status"][-1] == traj.status.value
        assert list(data["status"][:-1]) == ["Running"] * (len(traj) - 1)

    def test_unconstrained_columns_read_back_nan(self, unconstrained):
        traj = integrate(FlowSpec(), unconstrained, [1.0], StepperSpec.parse("euler:0.5", horizon=1.0))
        data = read_trajectory_csv(io.StringIO(trajectory_csv_text(traj)))
        assert np.isnan(data["max_g"]).all()

    def test_json_text_cleans_values(self):
        payload = {"a": np.array([1.0, np.inf]), "b": np.float64(np.nan), "c": np.bool_(True), "d": np.int64(3)}
        assert json.loads(json_text(payload)) == {"a": [1.0, None], "b": None, "c": True, "d": 3}


class TestConfig:
    def test_defaults(self, monkeypatch, tmp_path):
        monkeypatch.delenv("SGFLOW_CONFIG", raising=False)
        monkeypatch.chdir(tmp_path)
        assert load_settings() == Settings()

    def test_file_overrides(self, tmp_path, caplog):
        path = tmp_path / "settings.json"
        path.write_text(json.dumps({"horizon": 5.0, "stepper": "rk4:0.1", "colour": "blue"}))
        with caplog.at_level(logging.WARNING):
            settings = load_settings(path)
        assert settings.horizon == 5.0
        assert settings.stepper == "rk4:0.1"
        assert settings.tol_kkt == Settings().tol_kkt
        assert "colour" in caplog.text

    def test_environment_path(self, tmp_path, monkeypatch):
        path = tmp_path / "env.json"
        path.write_text(json.dumps({"eps_conv": 1e-4}))
        monkeypatch.setenv("SGFLOW_CONFIG", str(path))
        assert load_settings().eps_conv == 1e-4

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[]")
        with pytest.raises(ValueError):
            load_settings(path)

    def test_thread_count(self, monkeypatch):
        monkeypatch.setenv("SGFLOW_THREADS", "3")
        assert thread_count(Settings(threads=8)) == 3
        monkeypatch.setenv("SGFLOW_THREADS", "many")
        assert thread_count(Settings(threads=8)) == 8
        monkeypatch.delenv("SGFLOW_THREADS")
        assert thread_count(Settings()) >= 1


class TestLogging:
    def test_log_level_from_environment(self, monkeypatch):
        monkeypatch.setenv("SGFLOW_LOG_LEVEL", "debug")
        assert get_log_level() == logging.DEBUG
        monkeypatch.setenv("SGFLOW_LOG_LEVEL", "chatty")
        assert get_log_level() == logging.WARNING

    def test_setup_writes_log_file(self, monkeypatch, tmp_path):
        root = logging.getLogger()
        saved_handlers, saved_level = root.handlers[:], root.level
        monkeypatch.setattr(SGFlowLoggerSetup, "_initialized", False)
        try:
            SGFlowLoggerSetup.setup(log_dir=str(tmp_path / "logs"), console_level=logging.ERROR)
            logging.getLogger("sgflow.test").debug("written to file only")
            for handler in root.handlers:
                handler.flush()
            files = list((tmp_path / "logs").glob("sgflow_*.log"))
            assert len(files) == 1
            assert "written to file only" in files[0].read_text()
        finally:
            for handler in root.handlers:
                handler.close()
            root.handlers = saved_handlers
            root.setLevel(saved_level)
