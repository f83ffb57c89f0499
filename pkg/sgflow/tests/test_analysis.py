import numpy as np
import pytest

from sgflow import corpus
from sgflow.analysis import (
    alpha_lower_bound,
    approximation_error,
    check_cq,
    exact_penalty,
    exact_penalty_dini,
    flow_jacobian,
    kkt_report,
    lagrange_multipliers,
    value_function_diag,
)
from sgflow.flows import FlowSpec, safe_gradient_field
from sgflow.integrate import StepperSpec, integrate
from sgflow.model import QuadraticForm, RankDeficientError, quadratic_problem

X_STAR = np.array([0.25, 0.25])
U_STAR = np.array([0.0, 0.375])


def _two_constraints(second):
    """f = |x|^2 / 2 with g1 = x1 and g2 = second * x1."""
    return quadratic_problem(H=np.eye(2), c=[0.0, 0.0], inequalities=[
        QuadraticForm(a=np.array([1.0, 0.0])),
        QuadraticForm(a=np.array([second, 0.0])),
    ])


class TestKktReport:
    def test_known_point(self, fig3):
        report = kkt_report(fig3.problem, X_STAR, U_STAR, [])
        assert report.is_kkt
        assert report.stationarity_residual == pytest.approx(0.0, abs=1e-12)

    def test_origin_without_multipliers(self, fig3):
        report = kkt_report(fig3.problem, [0.0, 0.0], [0.0, 0.0], [])
        assert report.stationarity_residual == pytest.approx(0.5)
        assert report.primal_infeasibility == 0.0
        assert not report.is_kkt

    def test_origin_with_multipliers(self, fig3):
        report = kkt_report(fig3.problem, [0.0, 0.0], U_STAR, [])
        assert report.stationarity_residual == pytest.approx(0.125)

    def test_negative_multiplier_and_infeasibility(self, fig3):
        report = kkt_report(fig3.problem, [-0.75, 0.1], [-0.5, 0.0], [])
        assert report.dual_infeasibility == pytest.approx(0.5)
        assert report.primal_infeasibility == pytest.approx(0.75)
        assert report.to_dict()["is_kkt"] is False


class TestConstraintQualification:
    def test_fig3_origin(self, fig3):
        report = check_cq(fig3.problem, [0.0, 0.0])
        assert report.active == (0, 1)
        assert report.licq and report.mfcq
        assert report.rank == 2

    def test_parallel_gradients(self):
        """x1 <= 0 twice over: LICQ fails but an inward direction exists."""
        report = check_cq(_two_constraints(2.0), [0.0, 0.0])
        assert not report.licq
        assert report.rank == 1
        assert report.mfcq
        assert report.mfcq_direction[0] < 0

    def test_opposite_gradients(self):
        """x1 <= 0 and -x1 <= 0 leave no interior."""
        report = check_cq(_two_constraints(-1.0), [0.0, 0.0])
        assert not report.mfcq
        assert report.mfcq_margin == pytest.approx(0.0, abs=1e-9)

    def test_violated_rows_enter_extended_test(self, fig3):
        report = check_cq(fig3.problem, [-0.75, 0.1])
        assert report.active == ()
        assert report.violated == (0,)
        assert report.mfcq
        assert report.emfcq


class TestFlowJacobian:
    """Jacobian of the safe gradient flow at KKT points."""

    def test_fig3_spectrum(self, fig3):
        report = flow_jacobian(fig3.problem, X_STAR, U_STAR, [], 1.0)
        assert report.r == 1
        np.testing.assert_allclose(np.sort(report.eigenvalues.real), [-1.0, -0.5], atol=1e-10)
        assert report.spectrum_error < 1e-10
        assert report.fd_discrepancy < 1e-5
        assert report.warnings == ()

    def test_one_dimensional(self):
        entry = corpus.get("jacobian-1d")
        report = flow_jacobian(entry.problem, [0.0], [1.0], [], 2.0)
        np.testing.assert_allclose(report.J, [[-2.0]])
        np.testing.assert_allclose(report.P, [[0.0]], atol=1e-12)

    def test_nonlinear_constraint(self):
        """circle-complement at (1, 0): -alpha on the normal, -0.5 along the circle."""
        p = corpus.get("circle-complement").problem
        report = flow_jacobian(p, [1.0, 0.0], [0.25], [], 3.0, fd=False)
        np.testing.assert_allclose(np.sort(report.eigenvalues.real), [-3.0, -0.5], atol=1e-10)
        assert report.fd_jacobian is None

    def test_warns_without_strict_complementarity(self, fig3):
        report = flow_jacobian(fig3.problem, [0.0, 0.0], [0.0, 0.0], [], 1.0, fd=False)
        assert any("KKT" in note for note in report.warnings)
        assert any("complementarity" in note for note in report.warnings)

    def test_alpha_must_be_positive(self, fig3):
        with pytest.raises(ValueError):
            flow_jacobian(fig3.problem, X_STAR, U_STAR, [], 0.0)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientError):
            flow_jacobian(_two_constraints(2.0), [0.0, 0.0], [1.0, 1.0], [], 1.0)


class TestLyapunovMonitors:
    def test_exact_penalty(self, fig3):
        """f(-0.75, 0.1) = 0.543125 and the violation 0.75 is scaled by 1/eps."""
        assert exact_penalty(fig3.problem, [-0.75, 0.1], 0.5) == pytest.approx(0.543125 + 1.5)
        assert exact_penalty(fig3.problem, X_STAR, 0.5) == pytest.approx(-0.03125)

    def test_exact_penalty_needs_positive_eps(self, fig3):
        with pytest.raises(ValueError):
            exact_penalty(fig3.problem, X_STAR, 0.0)

    def test_dini_derivative_along_flow(self, fig3):
        """At (-0.75, 0.1) both constraints bind and xi = (0.75, -0.1)."""
        xi = safe_gradient_field(fig3.problem, [-0.75, 0.1], 1.0).xi
        np.testing.assert_allclose(xi, [0.75, -0.1], atol=1e-10)
        rate = exact_penalty_dini(fig3.problem, [-0.75, 0.1], 0.5, xi)
        assert rate == pytest.approx(-0.68625 - 1.5, abs=1e-8)

    def test_value_function_at_kkt_point(self, fig3):
        diag = value_function_diag(fig3.problem, X_STAR, 2.0)
        assert diag.W == pytest.approx(2.0 * -0.03125, abs=1e-10)
        np.testing.assert_allclose(diag.grad_W, 0.0, atol=1e-10)
        np.testing.assert_allclose(diag.u, U_STAR, atol=1e-8)

    def test_value_function_gradient_matches_finite_differences(self, fig3):
        """W is piecewise quadratic on fig3, so central differences are exact inside a piece."""
        p = fig3.problem
        step = 1e-4
        checked = 0
        for x in fig3.sample_points(np.random.default_rng(2), 50, feasible=True):
            diag = value_function_diag(p, x, 1.0)
            slack = p.ineq_jacobian(x) @ diag.xi + p.ineq(x)
            if np.any(np.abs(slack) + diag.u < 1e-2):
                continue  # binding set changes within the stencil
            fd = np.array([
                (value_function_diag(p, x + step * e, 1.0).W - value_function_diag(p, x - step * e, 1.0).W)
                / (2.0 * step)
                for e in np.eye(p.n)
            ])
            np.testing.assert_allclose(diag.grad_W, fd, rtol=1e-4, atol=1e-7)
            checked += 1
        assert checked >= 20

    def test_value_function_decreases_along_trajectory(self, fig3):
        """alpha = 1 exceeds the Hessian radius 0.5, so W falls along feasible trajectories."""
        traj = integrate(FlowSpec(alpha=1.0), fig3.problem, fig3.feasible_x0,
                         StepperSpec.parse("rk4:1e-2", horizon=10.0))
        W = np.array([value_function_diag(fig3.problem, x, 1.0).W for x in traj.states])
        assert np.all(np.diff(W) <= 1e-9)


class TestMultipliers:
    def test_alpha_lower_bound(self, fig3):
        assert alpha_lower_bound(fig3.problem, X_STAR, U_STAR, []) == pytest.approx(0.5)

    def test_alpha_lower_bound_nonlinear(self):
        p = corpus.get("circle-complement").problem
        assert alpha_lower_bound(p, [-1.0, 0.0], [0.75], []) == pytest.approx(0.5)

    def test_lagrange_multipliers(self, fig3):
        u, v = lagrange_multipliers(fig3.problem, X_STAR)
        np.testing.assert_allclose(u, U_STAR, atol=1e-12)
        assert v.size == 0

    def test_lagrange_multipliers_equality(self):
        u, v = lagrange_multipliers(corpus.get("sphere-eq").problem, [-1.0, 0.0, 0.0])
        assert u.size == 0
        np.testing.assert_allclose(v, [-1.5])


class TestApproximationError:
    def test_decreasing_in_alpha(self, fig3):
        """Near the boundary g2 = 0 the gap closes linearly in alpha until g2 stops binding."""
        alphas = [1.0, 10.0, 100.0, 1000.0]
        errors = approximation_error(fig3.problem, [0.0, 0.001], alphas)
        expected = [max(0.7505 - 1e-3 * a, 0.0) / np.sqrt(2.0) for a in alphas]
        np.testing.assert_allclose(errors, expected, atol=1e-9)
        assert np.all(np.diff(errors) < 0)
