"""Vector fields for constrained optimization.

The safe gradient flow projects -grad f onto

    {xi : jac_g xi <= -alpha g(x),  jac_h xi = -alpha h(x)}

and can be built three ways (direct projection, the feedback QP over the
admissible control set, or the multiplier dual). The remaining fields are
the baselines it is compared against.
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from sgflow.model import (
    DEFAULT_EPS_ACT,
    PointData,
    Problem,
    RankDeficientError,
    classify_values,
    evaluate_point,
)
from sgflow.qp import (
    ActiveSetSolver,
    Polyhedron,
    QpOptions,
    QpStatus,
    feedback_qp,
)
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


class FlowError(Exception):
    pass


class FlowUndefinedError(FlowError):
    """The vector field has no value at x."""

    def __init__(self, message: str, x: Optional[np.ndarray] = None):
        super().__init__(message)
        self.x = x


class InfeasiblePointError(FlowUndefinedError):
    pass


class DomainError(FlowUndefinedError):
    pass


class UnsupportedProblemError(FlowError):
    pass


class UnsupportedEqualityError(UnsupportedProblemError):
    pass


class NonPolyhedralUnsupportedError(UnsupportedProblemError):
    pass


class FlowKind(str, Enum):
    SAFE_GRADIENT = "sgf"
    PROJECTED_GRADIENT = "projected-gradient"
    LOG_BARRIER = "log-barrier"
    L2_PENALTY = "l2-penalty"
    SADDLE_POINT = "saddle-point"
    GLOBALLY_PROJECTED = "globally-projected"
    EQUALITY_CLOSED_FORM = "equality-closed-form"


class Construction(str, Enum):
    PROJECTION = "projection"
    FEEDBACK_QP = "feedback"
    DUAL_QP = "dual"


METHOD_NAMES = tuple(kind.value for kind in FlowKind)


@dataclass(frozen=True)
class FlowSpec:
    kind: FlowKind = FlowKind.SAFE_GRADIENT
    alpha: float = 1.0
    construction: Construction = Construction.PROJECTION
    mu: float = 1e-2
    eps_pen: float = 10.0
    eta: float = 1.0
    eps_act: float = DEFAULT_EPS_ACT

    def __post_init__(self):
        for name in ("alpha", "mu", "eps_pen", "eta", "eps_act"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def from_name(cls, name: str, **params) -> "FlowSpec":
        """Build a spec from a method name such as 'sgf' or 'log-barrier'.

        'sgf:feedback' and 'sgf:dual' select the alternative constructions.
        Parameters that are None are left at their defaults.
        """
        base, _, variant = name.strip().lower().partition(":")
        try:
            kind = FlowKind(base)
        except ValueError:
            raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
        params = {k: v for k, v in params.items() if v is not None}
        if variant:
            if kind != FlowKind.SAFE_GRADIENT:
                raise ValueError(f"method {base!r} has no variant {variant!r}")
            params["construction"] = Construction(variant)
        elif "construction" in params:
            params["construction"] = Construction(params["construction"])
        return cls(kind=kind, **params)

    @property
    def method_name(self) -> str:
        """Name that from_name maps back to this kind and construction."""
        if self.kind == FlowKind.SAFE_GRADIENT and self.construction != Construction.PROJECTION:
            return f"{self.kind.value}:{self.construction.value}"
        return self.kind.value

    @property
    def label(self) -> str:
        if self.kind == FlowKind.SAFE_GRADIENT:
            return f"sgf(alpha={self.alpha:g},{self.construction.value})"
        if self.kind == FlowKind.LOG_BARRIER:
            return f"log-barrier(mu={self.mu:g})"
        if self.kind == FlowKind.L2_PENALTY:
            return f"l2-penalty(eps={self.eps_pen:g})"
        if self.kind == FlowKind.GLOBALLY_PROJECTED:
            return f"globally-projected(eta={self.eta:g})"
        if self.kind == FlowKind.EQUALITY_CLOSED_FORM:
            return f"equality-closed-form(alpha={self.alpha:g})"
        return self.kind.value


@dataclass(frozen=True)
class FlowEval:
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    status: QpStatus = QpStatus.OPTIMAL
    f: float = float("nan")
    violation: float = 0.0
    qp_iterations: int = 0

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.xi))


def _flow_eval(point: PointData, xi, u, v, status=QpStatus.OPTIMAL, iterations=0) -> FlowEval:
    return FlowEval(
        xi=np.asarray(xi, dtype=float), u=np.asarray(u, dtype=float), v=np.asarray(v, dtype=float),
        status=status, f=point.f, violation=point.max_violation, qp_iterations=iterations,
    )


def _check_status(status: QpStatus, x, what: str):
    if status in (QpStatus.INFEASIBLE, QpStatus.UNBOUNDED):
        raise FlowUndefinedError(f"{what} is empty at x={np.array2string(np.asarray(x), precision=6)}", x)
    if status == QpStatus.ITER_LIMIT:
        raise FlowUndefinedError(f"{what} solve hit the iteration limit", x)
    if status == QpStatus.DEGENERATE:
        log.warning(f"{what} solve is degenerate at x={np.array2string(np.asarray(x), precision=6)}")


def safe_gradient_field(p: Problem, x, alpha: float,
                        construction: Construction = Construction.PROJECTION,
                        solver: Optional[ActiveSetSolver] = None,
                        point: Optional[PointData] = None) -> FlowEval:
    """Evaluate the safe gradient flow at x.

    The Projection and DualQP constructions return multipliers in the
    Lagrange multiplier set of the inner projection; FeedbackQP returns
    the least-norm admissible control, which can lie outside it.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    point = point if point is not None else evaluate_point(p, x)
    solver = solver or ActiveSetSolver()
    construction = Construction(construction)

    if construction == Construction.PROJECTION:
        poly = Polyhedron(A=point.jac_g, b=-alpha * point.g, E=point.jac_h, e=-alpha * point.h)
        sol = solver.project(-point.grad_f, poly)
        _check_status(sol.status, point.x, "safe gradient polyhedron")
        return _flow_eval(point, sol.xi, sol.mult_ineq, sol.mult_eq, sol.status, sol.iterations)

    if construction == Construction.FEEDBACK_QP:
        sol = feedback_qp(p, point.x, alpha, point=point, solver=solver)
        _check_status(sol.status, point.x, "admissible control set")
        return _flow_eval(point, sol.xi, sol.u, sol.v, sol.status, sol.iterations)

    M = point.constraint_jacobian
    lin = M @ point.grad_f - alpha * point.constraint_values
    dual = solver.solve_dual(M @ M.T, lin, p.m)
    _check_status(dual.status, point.x, "safe gradient polyhedron")
    w = np.concatenate([dual.u, dual.v])
    xi = -point.grad_f - M.T @ w
    return _flow_eval(point, xi, dual.u, dual.v, dual.status, dual.iterations)


def projected_gradient_field(p: Problem, x, eps_act: float = DEFAULT_EPS_ACT,
                             solver: Optional[ActiveSetSolver] = None,
                             point: Optional[PointData] = None) -> FlowEval:
    """Project -grad f onto the tangent cone of the feasible set at x."""
    point = point if point is not None else evaluate_point(p, x)
    if point.max_violation > eps_act:
        raise InfeasiblePointError(f"x violates the constraints by {point.max_violation:.3e}", point.x)
    solver = solver or ActiveSetSolver()
    active = list(classify_values(point.g, eps_act).i0)
    poly = Polyhedron(A=point.jac_g[active], b=np.zeros(len(active)),
                      E=point.jac_h, e=np.zeros(p.k))
    sol = solver.project(-point.grad_f, poly)
    _check_status(sol.status, point.x, "tangent cone")
    u = np.zeros(p.m)
    u[active] = sol.mult_ineq
    return _flow_eval(point, sol.xi, u, sol.mult_eq, sol.status, sol.iterations)


def log_barrier_field(p: Problem, x, mu: float, point: Optional[PointData] = None) -> FlowEval:
    """Negative gradient of f - mu sum log(-g_i). Reports u_i = mu / (-g_i)."""
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if p.k > 0:
        raise UnsupportedEqualityError("log-barrier handles inequality constraints only")
    point = point if point is not None else evaluate_point(p, x)
    if p.m and np.max(point.g) >= 0:
        raise DomainError(f"x is not strictly feasible (max g = {np.max(point.g):.3e})", point.x)
    u = mu / (-point.g)
    xi = -point.grad_f - point.jac_g.T @ u
    return _flow_eval(point, xi, u, np.zeros(0))


def l2_penalty_field(p: Problem, x, eps_pen: float, point: Optional[PointData] = None) -> FlowEval:
    """Negative gradient of f + eps/2 (sum [g_i]_+^2 + sum h_j^2)."""
    if eps_pen <= 0:
        raise ValueError(f"eps_pen must be positive, got {eps_pen}")
    point = point if point is not None else evaluate_point(p, x)
    u = eps_pen * np.maximum(point.g, 0.0)
    v = eps_pen * point.h
    xi = -point.grad_f - point.jac_g.T @ u - point.jac_h.T @ v
    return _flow_eval(point, xi, u, v)


class SaddleRates(NamedTuple):
    x_dot: np.ndarray
    u_dot: np.ndarray
    v_dot: np.ndarray


def saddle_point_field(p: Problem, x, u, v, point: Optional[PointData] = None) -> SaddleRates:
    """Primal descent, projected dual ascent on the Lagrangian (unit gains)."""
    point = point if point is not None else evaluate_point(p, x)
    u = np.asarray(u, dtype=float).reshape(p.m)
    v = np.asarray(v, dtype=float).reshape(p.k)
    if p.m and np.min(u) < 0:
        raise ValueError("saddle-point dual state u must be nonnegative")
    x_dot = -point.grad_f - point.jac_g.T @ u - point.jac_h.T @ v
    u_dot = np.where(u > 0, point.g, np.maximum(point.g, 0.0))
    return SaddleRates(x_dot=x_dot, u_dot=u_dot, v_dot=np.array(point.h))


def feasible_polyhedron(p: Problem, point: PointData) -> Polyhedron:
    """The feasible set of an affine-constraint problem as {A x <= b, E x = e}."""
    if not p.affine_constraints:
        raise NonPolyhedralUnsupportedError(f"{p.name}: constraints are not affine")
    x = point.x
    return Polyhedron(
        A=np.array(point.jac_g), b=point.jac_g @ x - point.g,
        E=np.array(point.jac_h), e=point.jac_h @ x - point.h,
    )


def globally_projected_field(p: Problem, x, eta: float = 1.0,
                             solver: Optional[ActiveSetSolver] = None,
                             point: Optional[PointData] = None) -> FlowEval:
    """xi = Proj_C(x - eta grad f) - x for polyhedral C.

    Multipliers of the projection are divided by eta so that they estimate
    the Lagrange multipliers at a fixed point.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    point = point if point is not None else evaluate_point(p, x)
    poly = feasible_polyhedron(p, point)
    solver = solver or ActiveSetSolver()
    sol = solver.project(point.x - eta * point.grad_f, poly)
    _check_status(sol.status, point.x, "feasible set")
    return _flow_eval(point, sol.xi - point.x, sol.mult_ineq / eta, sol.mult_eq / eta,
                      sol.status, sol.iterations)


def equality_closed_form_field(p: Problem, x, alpha: float, tol_rank: float = 1e-10,
                               point: Optional[PointData] = None) -> FlowEval:
    """-(I - J^+ J) grad f - alpha J^+ h(x) for equality-only problems."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if p.m > 0:
        raise UnsupportedProblemError("closed form needs a problem without inequality constraints")
    point = point if point is not None else evaluate_point(p, x)
    if p.k == 0:
        return _flow_eval(point, -point.grad_f, np.zeros(0), np.zeros(0))
    J = point.jac_h
    sigma = scipy.linalg.svdvals(J)
    if sigma.size < p.k or sigma[-1] <= tol_rank * max(1.0, sigma[0]):
        raise RankDeficientError(f"jac_h is rank deficient at x (smallest singular value {sigma[-1]:.3e})")
    J_pinv = scipy.linalg.pinv(J)
    projector = np.eye(p.n) - J_pinv @ J
    xi = -projector @ point.grad_f - alpha * (J_pinv @ point.h)
    # xi = -grad f - J^T v
    v = -J_pinv.T @ (point.grad_f + xi)
    return _flow_eval(point, xi, np.zeros(0), v)


def evaluate_flow(spec: FlowSpec, p: Problem, x,
                  solver: Optional[ActiveSetSolver] = None,
                  point: Optional[PointData] = None) -> FlowEval:
    """Evaluate the primal field named by spec at x (saddle-point: zero duals)."""
    if spec.kind == FlowKind.SAFE_GRADIENT:
        return safe_gradient_field(p, x, spec.alpha, spec.construction, solver=solver, point=point)
    if spec.kind == FlowKind.PROJECTED_GRADIENT:
        return projected_gradient_field(p, x, spec.eps_act, solver=solver, point=point)
    if spec.kind == FlowKind.LOG_BARRIER:
        return log_barrier_field(p, x, spec.mu, point=point)
    if spec.kind == FlowKind.L2_PENALTY:
        return l2_penalty_field(p, x, spec.eps_pen, point=point)
    if spec.kind == FlowKind.GLOBALLY_PROJECTED:
        return globally_projected_field(p, x, spec.eta, solver=solver, point=point)
    if spec.kind == FlowKind.EQUALITY_CLOSED_FORM:
        return equality_closed_form_field(p, x, spec.alpha, point=point)
    point = point if point is not None else evaluate_point(p, x)
    rates = saddle_point_field(p, point.x, np.zeros(p.m), np.zeros(p.k), point=point)
    return _flow_eval(point, rates.x_dot, np.zeros(p.m), np.zeros(p.k))


class FlowSystem:
    """A flow as an autonomous ODE on a flat state vector.

    The state is x for every flow except the saddle-point dynamics, whose
    state is (x, u, v). Each system owns one QP solver workspace, so a
    system must not be shared between threads.
    """

    def __init__(self, spec: FlowSpec, problem: Problem, qp_options: Optional[QpOptions] = None):
        self.spec = spec
        self.problem = problem
        self.solver = ActiveSetSolver(qp_options)
        self.log = get_logger(__name__)
        if spec.kind == FlowKind.LOG_BARRIER and problem.k > 0:
            raise UnsupportedEqualityError("log-barrier handles inequality constraints only")
        if spec.kind == FlowKind.GLOBALLY_PROJECTED and not problem.affine_constraints:
            raise NonPolyhedralUnsupportedError(f"{problem.name}: constraints are not affine")
        if spec.kind == FlowKind.EQUALITY_CLOSED_FORM and problem.m > 0:
            raise UnsupportedProblemError("closed form needs a problem without inequality constraints")

    @property
    def has_dual_state(self) -> bool:
        return self.spec.kind == FlowKind.SADDLE_POINT

    @property
    def state_size(self) -> int:
        p = self.problem
        return p.n + p.m + p.k if self.has_dual_state else p.n

    @property
    def qp_iterations(self) -> int:
        return self.solver.total_iterations

    def initial_state(self, x0, u0=None, v0=None) -> np.ndarray:
        p = self.problem
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.size != p.n:
            raise ValueError(f"x0 has {x0.size} entries, problem has n={p.n}")
        if not self.has_dual_state:
            return x0.copy()
        u0 = np.zeros(p.m) if u0 is None else np.asarray(u0, dtype=float).reshape(p.m)
        v0 = np.zeros(p.k) if v0 is None else np.asarray(v0, dtype=float).reshape(p.k)
        return np.concatenate([x0, np.maximum(u0, 0.0), v0])

    def split(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.problem
        if not self.has_dual_state:
            return state, np.zeros(0), np.zeros(0)
        return state[:p.n], state[p.n:p.n + p.m], state[p.n + p.m:]

    def project_state(self, state: np.ndarray) -> np.ndarray:
        """Clamp the saddle-point dual state onto u >= 0."""
        if not self.has_dual_state or self.problem.m == 0:
            return state
        p = self.problem
        state = state.copy()
        state[p.n:p.n + p.m] = np.maximum(state[p.n:p.n + p.m], 0.0)
        return state

    def rate(self, state: np.ndarray) -> Tuple[np.ndarray, FlowEval]:
        """Full state derivative plus the field evaluation at the primal part."""
        p = self.problem
        x, u, v = self.split(state)
        point = evaluate_point(p, x)
        if not self.has_dual_state:
            ev = evaluate_flow(self.spec, p, x, solver=self.solver, point=point)
            return ev.xi, ev
        rates = saddle_point_field(p, x, np.maximum(u, 0.0), v, point=point)
        ev = _flow_eval(point, rates.x_dot, np.maximum(u, 0.0), v)
        return np.concatenate([rates.x_dot, rates.u_dot, rates.v_dot]), ev
