import numpy as np
import pytest

from sgflow import corpus
from sgflow.model import (
    DimensionError,
    EvaluationError,
    Problem,
    QuadraticForm,
    classify_constraints,
    classify_values,
    evaluate_point,
    finite_difference_gradient,
    finite_difference_hessian,
    lagrangian_hessian,
    max_violation,
    quadratic_problem,
)


class TestProblem:
    """Evaluation, shape checking and validation of problems."""

    def test_quadratic_values(self, fig3):
        """fig3 objective at its minimizer is -1/32."""
        point = evaluate_point(fig3.problem, [0.25, 0.25])
        assert point.f == pytest.approx(-0.03125)
        np.testing.assert_allclose(point.grad_f, [-0.375, 0.375])
        np.testing.assert_allclose(point.g, [-0.25, 0.0])
        np.testing.assert_allclose(point.jac_g, [[-1.0, 0.0], [1.0, -1.0]])
        assert point.h.shape == (0,)
        assert point.jac_h.shape == (0, 2)

    def test_point_data_is_read_only(self, fig3):
        point = evaluate_point(fig3.problem, [0.1, 0.2])
        with pytest.raises(ValueError):
            point.grad_f[0] = 1.0

    def test_gradients_match_finite_differences(self):
        """Analytic gradients agree with central differences on every corpus entry."""
        rng = np.random.default_rng(0)
        for name in ("fig3", "sphere-eq", "circle-complement", "rosenbrock-disk"):
            entry = corpus.get(name)
            p = entry.problem
            for x in entry.sample_points(rng, 5):
                np.testing.assert_allclose(p.gradient(x), finite_difference_gradient(p.objective, x),
                                           rtol=1e-6, atol=1e-6)

    def test_wrong_shape_raises(self):
        p = Problem(n=2, f=lambda x: x @ x, grad_f=lambda x: 2 * x, m=1,
                    g=lambda x: np.array([x[0], x[1]]), jac_g=lambda x: np.eye(2))
        with pytest.raises(DimensionError):
            evaluate_point(p, [0.0, 0.0])

    def test_non_finite_output_raises(self):
        p = Problem(n=1, f=lambda x: np.nan, grad_f=lambda x: x)
        with pytest.raises(EvaluationError) as info:
            evaluate_point(p, [1.0])
        assert info.value.component == "f"

    def test_point_dimension_checked(self, fig3):
        with pytest.raises(DimensionError):
            evaluate_point(fig3.problem, [0.0, 0.0, 0.0])

    def test_missing_constraint_evaluators(self):
        with pytest.raises(ValueError):
            Problem(n=1, f=lambda x: 0.0, grad_f=lambda x: x, m=1)

    def test_affine_flag(self, fig3):
        assert fig3.problem.affine_constraints
        assert not corpus.get("circle-complement").problem.affine_constraints


class TestDerivatives:
    """Hessians, with and without analytic second derivatives."""

    def test_lagrangian_hessian(self):
        """circle-complement at (1, 0) with u = 0.25: I + 0.25 * (-2 I) = 0.5 I."""
        p = corpus.get("circle-complement").problem
        np.testing.assert_allclose(lagrangian_hessian(p, [1.0, 0.0], [0.25], []), 0.5 * np.eye(2))

    def test_finite_difference_hessian_fallback(self):
        """Rosenbrock Hessian at (1, 1) is [[802, -400], [-400, 200]]."""
        p = corpus.get("rosenbrock-disk").problem
        expected = np.array([[802.0, -400.0], [-400.0, 200.0]])
        np.testing.assert_allclose(p.objective_hessian(np.array([1.0, 1.0])), expected, rtol=1e-5)
        np.testing.assert_allclose(finite_difference_hessian(p.gradient, np.array([1.0, 1.0])),
                                   expected, rtol=1e-5)

    def test_constraint_hessians_without_analytic_data(self):
        """The disk constraint |x|^2 - 2 has Hessian 2 I."""
        p = corpus.get("rosenbrock-disk").problem
        np.testing.assert_allclose(p.ineq_hessians(np.array([0.3, -0.2])), [2.0 * np.eye(2)], atol=1e-6)


class TestQuadraticForm:
    def test_affine(self):
        form = QuadraticForm(a=np.array([1.0, -1.0]), b=2.0)
        assert form.is_affine
        assert form.value(np.array([3.0, 0.0])) == pytest.approx(1.0)
        np.testing.assert_allclose(form.hessian(np.zeros(2)), np.zeros((2, 2)))

    def test_quadratic(self):
        form = QuadraticForm(a=np.zeros(2), b=1.0, S=2.0 * np.eye(2))
        assert not form.is_affine
        assert form.value(np.array([1.0, 1.0])) == pytest.approx(1.0)
        np.testing.assert_allclose(form.gradient(np.array([1.0, 2.0])), [2.0, 4.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            quadratic_problem(H=np.eye(2), c=[0.0, 0.0],
                              inequalities=[QuadraticForm(a=np.zeros(3))])


class TestClassification:
    """Active, violated and inactive index sets."""

    def test_classify_values(self):
        active = classify_values(np.array([0.0, 1e-9, 0.5, -0.5]), 1e-8)
        assert active.i0 == (0, 1)
        assert active.i_plus == (2,)
        assert active.i_minus == (3,)

    def test_nonpositive_threshold(self):
        with pytest.raises(ValueError):
            classify_values(np.zeros(1), 0.0)

    def test_classify_constraints(self, fig3):
        active = classify_constraints(fig3.problem, [0.0, 0.0])
        assert active.i0 == (0, 1)

    def test_max_violation(self):
        assert max_violation(np.array([-1.0, 0.5]), np.array([-0.75])) == pytest.approx(0.75)
        assert max_violation(np.array([-1.0]), np.zeros(0)) == 0.0
        assert max_violation(np.zeros(0), np.zeros(0)) == 0.0
