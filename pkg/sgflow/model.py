"""Constrained nonlinear programs and their derivative information.

A :class:`Problem` describes

    minimize f(x)  subject to  g(x) <= 0,  h(x) = 0

with x in R^n, g: R^n -> R^m and h: R^n -> R^k. Second derivatives are
optional; when absent a central finite-difference fallback is used.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from sgflow.utils.logging import get_logger

log = get_logger(__name__)

Evaluator = Callable[[np.ndarray], object]

DEFAULT_EPS_ACT = 1e-8
_FD_BASE_STEP = np.finfo(float).eps ** (1.0 / 3.0)


class EvaluationError(Exception):
    """Raised when an evaluator returns non-finite output."""

    def __init__(self, component: str, message: Optional[str] = None):
        self.component = component
        super().__init__(message or f"non-finite output from {component}")


class DimensionError(ValueError):
    """Raised when an evaluator output does not match (n, m, k)."""


class RankDeficientError(Exception):
    """Raised when a constraint Jacobian that must have full row rank does not."""


def fd_step(x: np.ndarray) -> float:
    """Central-difference step: cube root of machine epsilon scaled by (1 + |x|_inf)."""
    return _FD_BASE_STEP * (1.0 + (np.max(np.abs(x)) if x.size else 0.0))


def finite_difference_gradient(fun: Evaluator, x: np.ndarray) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    eta = fd_step(x)
    grad = np.empty_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eta
        grad[j] = (float(fun(x + step)) - float(fun(x - step))) / (2.0 * eta)
    return grad


def finite_difference_jacobian(fun: Evaluator, x: np.ndarray) -> np.ndarray:
    """Central-difference derivative of an array-valued function.

    The derivative direction is stacked on the last axis, so a function
    returning shape (p,) yields (p, n) and one returning (p, n) yields (p, n, n).
    """
    x = np.asarray(x, dtype=float)
    eta = fd_step(x)
    columns = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eta
        forward = np.asarray(fun(x + step), dtype=float)
        backward = np.asarray(fun(x - step), dtype=float)
        columns.append((forward - backward) / (2.0 * eta))
    return np.stack(columns, axis=-1)


def finite_difference_hessian(grad: Evaluator, x: np.ndarray) -> np.ndarray:
    """Symmetrized central-difference Hessian from a gradient evaluator."""
    hess = finite_difference_jacobian(grad, x)
    return 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class Problem:
    n: int
    f: Evaluator
    grad_f: Evaluator
    m: int = 0
    k: int = 0
    g: Optional[Evaluator] = None
    jac_g: Optional[Evaluator] = None
    h: Optional[Evaluator] = None
    jac_h: Optional[Evaluator] = None
    hess_f: Optional[Evaluator] = None
    hess_g: Optional[Sequence[Evaluator]] = None
    hess_h: Optional[Sequence[Evaluator]] = None
    name: str = "problem"
    affine_constraints: bool = False

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.m < 0 or self.k < 0:
            raise ValueError(f"m and k must be nonnegative, got m={self.m}, k={self.k}")
        if self.m > 0 and (self.g is None or self.jac_g is None):
            raise ValueError(f"{self.name}: m={self.m} requires g and jac_g")
        if self.k > 0 and (self.h is None or self.jac_h is None):
            raise ValueError(f"{self.name}: k={self.k} requires h and jac_h")
        if self.hess_g is not None and len(self.hess_g) != self.m:
            raise ValueError(f"{self.name}: hess_g needs {self.m} evaluators")
        if self.hess_h is not None and len(self.hess_h) != self.k:
            raise ValueError(f"{self.name}: hess_h needs {self.k} evaluators")

    def _checked(self, component: str, value, shape: Tuple[int, ...]) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.shape != shape:
            # tolerate (n,) for a single-row Jacobian and similar squeezes
            if arr.size == int(np.prod(shape)) and arr.ndim < len(shape):
                arr = arr.reshape(shape)
            else:
                raise DimensionError(
                    f"{self.name}: {component} returned shape {arr.shape}, expected {shape}"
                )
        if not np.all(np.isfinite(arr)):
            raise EvaluationError(component)
        return arr

    def objective(self, x: np.ndarray) -> float:
        value = np.asarray(self.f(x), dtype=float)
        if value.size != 1:
            raise DimensionError(f"{self.name}: f returned shape {value.shape}, expected scalar")
        value = float(value.reshape(()))
        if not np.isfinite(value):
            raise EvaluationError("f")
        return value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self._checked("grad_f", self.grad_f(x), (self.n,))

    def ineq(self, x: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        return self._checked("g", self.g(x), (self.m,))

    def ineq_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros((0, self.n))
        return self._checked("jac_g", self.jac_g(x), (self.m, self.n))

    def eq(self, x: np.ndarray) -> np.ndarray:
        if self.k == 0:
            return np.zeros(0)
        return self._checked("h", self.h(x), (self.k,))

    def eq_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.k == 0:
            return np.zeros((0, self.n))
        return self._checked("jac_h", self.jac_h(x), (self.k, self.n))

    def objective_hessian(self, x: np.ndarray) -> np.ndarray:
        if self.hess_f is not None:
            return self._checked("hess_f", self.hess_f(x), (self.n, self.n))
        return self._checked("hess_f", finite_difference_hessian(self.gradient, x), (self.n, self.n))

    def ineq_hessians(self, x: np.ndarray) -> np.ndarray:
        """Second derivatives of g, shape (m, n, n)."""
        if self.m == 0:
            return np.zeros((0, self.n, self.n))
        if self.hess_g is not None:
            return np.stack([
                self._checked(f"hess_g[{i}]", hess(x), (self.n, self.n))
                for i, hess in enumerate(self.hess_g)
            ])
        tensor = finite_difference_jacobian(self.ineq_jacobian, x)
        return self._checked("hess_g", 0.5 * (tensor + tensor.transpose(0, 2, 1)),
                             (self.m, self.n, self.n))

    def eq_hessians(self, x: np.ndarray) -> np.ndarray:
        """Second derivatives of h, shape (k, n, n)."""
        if self.k == 0:
            return np.zeros((0, self.n, self.n))
        if self.hess_h is not None:
            return np.stack([
                self._checked(f"hess_h[{j}]", hess(x), (self.n, self.n))
                for j, hess in enumerate(self.hess_h)
            ])
        tensor = finite_difference_jacobian(self.eq_jacobian, x)
        return self._checked("hess_h", 0.5 * (tensor + tensor.transpose(0, 2, 1)),
                             (self.k, self.n, self.n))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointData:
    """One bundled evaluation of a problem at x. Arrays are read-only."""
    x: np.ndarray
    f: float
    grad_f: np.ndarray
    g: np.ndarray
    jac_g: np.ndarray
    h: np.ndarray
    jac_h: np.ndarray

    @property
    def constraint_values(self) -> np.ndarray:
        return np.concatenate([self.g, self.h])

    @property
    def constraint_jacobian(self) -> np.ndarray:
        """Stacked [jac_g; jac_h], shape (m + k, n)."""
        return np.vstack([self.jac_g, self.jac_h])

    @property
    def max_violation(self) -> float:
        return max_violation(self.g, self.h)


def _as_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != n:
        raise DimensionError(f"point has {x.size} entries, problem has n={n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point must be finite")
    return x


def evaluate_point(p: Problem, x) -> PointData:
    """Evaluate f, grad f, g, dg/dx, h, dh/dx at x in one bundle."""
    x = _as_point(x, p.n)
    return PointData(
        x=_frozen(x),
        f=p.objective(x),
        grad_f=_frozen(p.gradient(x)),
        g=_frozen(p.ineq(x)),
        jac_g=_frozen(p.ineq_jacobian(x)),
        h=_frozen(p.eq(x)),
        jac_h=_frozen(p.eq_jacobian(x)),
    )


def max_violation(g: np.ndarray, h: np.ndarray) -> float:
    """max(max_i [g_i]_+, |h|_inf); zero for an unconstrained problem."""
    violation = 0.0
    if g.size:
        violation = max(violation, float(np.max(g)))
    if h.size:
        violation = max(violation, float(np.max(np.abs(h))))
    return violation


@dataclass(frozen=True)
class ActiveSet:
    i0: Tuple[int, ...] = field(default_factory=tuple)
    i_plus: Tuple[int, ...] = field(default_factory=tuple)
    i_minus: Tuple[int, ...] = field(default_factory=tuple)


def classify_values(g: np.ndarray, eps_act: float = DEFAULT_EPS_ACT) -> ActiveSet:
    if eps_act <= 0:
        raise ValueError(f"eps_act must be positive, got {eps_act}")
    g = np.asarray(g, dtype=float)
    return ActiveSet(
        i0=tuple(int(i) for i in np.flatnonzero(np.abs(g) <= eps_act)),
        i_plus=tuple(int(i) for i in np.flatnonzero(g > eps_act)),
        i_minus=tuple(int(i) for i in np.flatnonzero(g < -eps_act)),
    )


def classify_constraints(p: Problem, x, eps_act: float = DEFAULT_EPS_ACT) -> ActiveSet:
    """Split the inequality indices into active, violated and inactive (0-based)."""
    return classify_values(p.ineq(_as_point(x, p.n)), eps_act)


def lagrangian_hessian(p: Problem, x, u, v) -> np.ndarray:
    """Q(x, u, v) = hess f + sum_i u_i hess g_i + sum_j v_j hess h_j."""
    x = _as_point(x, p.n)
    u = np.asarray(u, dtype=float).reshape(p.m)
    v = np.asarray(v, dtype=float).reshape(p.k)
    q = p.objective_hessian(x)
    if p.m:
        q = q + np.einsum("i,ijk->jk", u, p.ineq_hessians(x))
    if p.k:
        q = q + np.einsum("j,jkl->kl", v, p.eq_hessians(x))
    return 0.5 * (q + q.T)


@dataclass(frozen=True)
class QuadraticForm:
    """q(x) = 1/2 x^T S x + a^T x - b; affine when S is None."""
    a: np.ndarray
    b: float = 0.0
    S: Optional[np.ndarray] = None

    @property
    def is_affine(self) -> bool:
        return self.S is None or not np.any(self.S)

    def value(self, x: np.ndarray) -> float:
        out = float(self.a @ x) - self.b
        if self.S is not None:
            out += 0.5 * float(x @ self.S @ x)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.S is None:
            return np.array(self.a, dtype=float)
        return self.S @ x + self.a

    def hessian(self, x: np.ndarray) -> np.ndarray:
        if self.S is None:
            return np.zeros((self.a.size, self.a.size))
        return np.array(self.S, dtype=float)


def quadratic_problem(H, c, d: float = 0.0,
                      inequalities: Sequence[QuadraticForm] = (),
                      equalities: Sequence[QuadraticForm] = (),
                      name: str = "quadratic") -> Problem:
    """Problem with objective 1/2 x^T H x + c^T x + d and degree-2 constraints."""
    c = np.asarray(c, dtype=float).reshape(-1)
    n = c.size
    H = np.zeros((n, n)) if H is None else np.asarray(H, dtype=float)
    if H.shape != (n, n):
        raise DimensionError(f"H has shape {H.shape}, expected {(n, n)}")
    objective = QuadraticForm(a=c, b=-float(d), S=H)
    ineqs = list(inequalities)
    eqs = list(equalities)
    for form in ineqs + eqs:
        if form.a.shape != (n,) or (form.S is not None and form.S.shape != (n, n)):
            raise DimensionError(f"{name}: constraint data does not match n={n}")

    def stack_values(forms):
        return lambda x: np.array([form.value(x) for form in forms])

    def stack_gradients(forms):
        return lambda x: np.array([form.gradient(x) for form in forms]).reshape(len(forms), n)

    return Problem(
        n=n,
        f=objective.value,
        grad_f=objective.gradient,
        m=len(ineqs),
        k=len(eqs),
        g=stack_values(ineqs) if ineqs else None,
        jac_g=stack_gradients(ineqs) if ineqs else None,
        h=stack_values(eqs) if eqs else None,
        jac_h=stack_gradients(eqs) if eqs else None,
        hess_f=objective.hessian,
        hess_g=[form.hessian for form in ineqs] if ineqs else None,
        hess_h=[form.hessian for form in eqs] if eqs else None,
        name=name,
        affine_constraints=all(form.is_affine for form in ineqs + eqs),
    )
