"""Optimality and regularity diagnostics.

KKT residuals, constraint qualification tests, the Jacobian of the safe
gradient flow at a KKT point with its predicted spectrum, and the exact
penalty and value functions used as numerical Lyapunov monitors.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from sgflow.flows import Construction, projected_gradient_field, safe_gradient_field
from sgflow.model import (
    DEFAULT_EPS_ACT,
    Problem,
    RankDeficientError,
    classify_values,
    evaluate_point,
    finite_difference_jacobian,
    lagrangian_hessian,
)
from sgflow.qp import ActiveSetSolver
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


def _complex_list(values) -> List[List[float]]:
    return [[float(np.real(z)), float(np.imag(z))] for z in values]


def _sorted_spectrum(values) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((np.round(values.imag, 10), np.round(values.real, 10)))
    return values[order]


@dataclass(frozen=True)
class KktReport:
    stationarity_residual: float
    primal_infeasibility: float
    dual_infeasibility: float
    complementarity: float
    u: np.ndarray
    v: np.ndarray
    tol: float = 1e-6

    @property
    def is_kkt(self) -> bool:
        return max(self.stationarity_residual, self.primal_infeasibility,
                   self.dual_infeasibility, self.complementarity) <= self.tol

    def to_dict(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "primal_infeasibility": self.primal_infeasibility,
            "dual_infeasibility": self.dual_infeasibility,
            "complementarity": self.complementarity,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "tol": self.tol,
            "is_kkt": self.is_kkt,
        }


def kkt_report(p: Problem, x, u, v, tol: float = 1e-6) -> KktReport:
    point = evaluate_point(p, x)
    u = np.asarray(u, dtype=float).reshape(p.m)
    v = np.asarray(v, dtype=float).reshape(p.k)
    stationarity = point.grad_f + point.jac_g.T @ u + point.jac_h.T @ v
    return KktReport(
        stationarity_residual=float(np.max(np.abs(stationarity))),
        primal_infeasibility=max(0.0, point.max_violation),
        dual_infeasibility=max(0.0, -float(np.min(u))) if p.m else 0.0,
        complementarity=float(np.max(np.abs(u * point.g))) if p.m else 0.0,
        u=u, v=v, tol=tol,
    )


@dataclass(frozen=True)
class CqReport:
    licq: bool
    rank: int
    rows: int
    smallest_singular_value: float
    mfcq: bool
    mfcq_margin: float
    mfcq_direction: np.ndarray
    emfcq: bool
    emfcq_margin: float
    emfcq_direction: np.ndarray
    active: Tuple[int, ...] = ()
    violated: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "licq": self.licq,
            "rank": self.rank,
            "rows": self.rows,
            "smallest_singular_value": self.smallest_singular_value,
            "mfcq": self.mfcq,
            "mfcq_margin": self.mfcq_margin,
            "mfcq_direction": self.mfcq_direction.tolist(),
            "emfcq": self.emfcq,
            "emfcq_margin": self.emfcq_margin,
            "emfcq_direction": self.emfcq_direction.tolist(),
            "active": list(self.active),
            "violated": list(self.violated),
        }


def _numerical_rank(M: np.ndarray, tol_rank: float) -> Tuple[int, float]:
    if M.shape[0] == 0:
        return 0, float("inf")
    sigma = scipy.linalg.svdvals(M)
    if sigma.size == 0 or sigma[0] == 0:
        return 0, 0.0
    rank = int(np.sum(sigma > tol_rank * sigma[0]))
    smallest = float(sigma[-1]) if sigma.size == M.shape[0] else 0.0
    return rank, smallest


def _inward_margin(jac_rows: np.ndarray, jac_h: np.ndarray) -> Tuple[float, np.ndarray]:
    """max delta s.t. rows xi + delta <= 0, jac_h xi = 0, |xi|_inf <= 1, delta <= 1."""
    n = jac_h.shape[1]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = b_ub = A_eq = b_eq = None
    if jac_rows.shape[0]:
        A_ub = np.hstack([jac_rows, np.ones((jac_rows.shape[0], 1))])
        b_ub = np.zeros(jac_rows.shape[0])
    if jac_h.shape[0]:
        A_eq = np.hstack([jac_h, np.zeros((jac_h.shape[0], 1))])
        b_eq = np.zeros(jac_h.shape[0])
    bounds = [(-1.0, 1.0)] * n + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        log.warning(f"constraint qualification lp failed: {res.message}")
        return float("-inf"), np.zeros(n)
    return float(res.x[-1]), res.x[:n]


def check_cq(p: Problem, x, eps_act: float = DEFAULT_EPS_ACT,
             tol_rank: float = 1e-10, tol_cq: float = 1e-8) -> CqReport:
    """LICQ by numerical rank; MFCQ and EMFCQ by an inward-direction LP."""
    point = evaluate_point(p, x)
    classes = classify_values(point.g, eps_act)
    active = list(classes.i0)
    extended = sorted(active + list(classes.i_plus))

    stacked = np.vstack([point.jac_g[active], point.jac_h])
    rank, smallest = _numerical_rank(stacked, tol_rank)
    licq = rank == stacked.shape[0]
    h_rank, _ = _numerical_rank(np.array(point.jac_h), tol_rank)
    h_full = h_rank == p.k

    margin, direction = _inward_margin(point.jac_g[active], point.jac_h)
    e_margin, e_direction = _inward_margin(point.jac_g[extended], point.jac_h)
    return CqReport(
        licq=bool(licq), rank=rank, rows=stacked.shape[0], smallest_singular_value=smallest,
        mfcq=bool(margin > tol_cq and h_full), mfcq_margin=margin, mfcq_direction=direction,
        emfcq=bool(e_margin > tol_cq and h_full), emfcq_margin=e_margin, emfcq_direction=e_direction,
        active=classes.i0, violated=classes.i_plus,
    )


@dataclass(frozen=True)
class JacobianReport:
    P: np.ndarray
    Q: np.ndarray
    J: np.ndarray
    eigenvalues: np.ndarray
    predicted: np.ndarray
    r: int
    fd_jacobian: Optional[np.ndarray] = None
    fd_discrepancy: float = float("nan")
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def spectrum_error(self) -> float:
        """Largest gap between sorted computed and predicted eigenvalues."""
        if self.eigenvalues.size == 0:
            return 0.0
        return float(np.max(np.abs(_sorted_spectrum(self.eigenvalues) - _sorted_spectrum(self.predicted))))

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "J": self.J.tolist(),
            "eigenvalues": _complex_list(_sorted_spectrum(self.eigenvalues)),
            "predicted": _complex_list(_sorted_spectrum(self.predicted)),
            "r": self.r,
            "spectrum_error": self.spectrum_error,
            "fd_discrepancy": self.fd_discrepancy,
            "warnings": list(self.warnings),
        }


def flow_jacobian(p: Problem, x, u, v, alpha: float, eps_act: float = DEFAULT_EPS_ACT,
                  tol_rank: float = 1e-10, tol_sc: float = 1e-8, fd: bool = True) -> JacobianReport:
    """Jacobian -PQ - alpha (I - P) of the safe gradient flow at a KKT point.

    P projects onto the kernel of the stacked active gradients [jac_h; jac_g[I0]]
    and Q is the Hessian of the Lagrangian. In a basis of ker M and its
    complement J is block triangular, so its spectrum is -alpha with
    multiplicity r = rank M plus the negated eigenvalues of Q on ker M.
    Precondition failures (not KKT, no strict complementarity) are logged
    and returned in `warnings`; a rank-deficient M raises.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    point = evaluate_point(p, x)
    x = point.x
    u = np.asarray(u, dtype=float).reshape(p.m)
    v = np.asarray(v, dtype=float).reshape(p.k)
    notes = []

    if not kkt_report(p, x, u, v).is_kkt:
        notes.append("point is not a KKT point at tolerance 1e-6")
    active = list(classify_values(point.g, eps_act).i0)
    if active and np.min(u[active]) < tol_sc:
        notes.append(f"strict complementarity fails (min active multiplier {np.min(u[active]):.3e})")
    for note in notes:
        log.warning(f"flow jacobian: {note}")

    M = np.vstack([point.jac_h, point.jac_g[active]])
    r = M.shape[0]
    n = p.n
    if r:
        rank, _ = _numerical_rank(M, tol_rank)
        if rank < r:
            raise RankDeficientError(f"active constraint gradients have rank {rank} < {r}")
        P = np.eye(n) - scipy.linalg.pinv(M) @ M
        Z = scipy.linalg.null_space(M)
    else:
        P = np.eye(n)
        Z = np.eye(n)
    P = 0.5 * (P + P.T)
    Q = lagrangian_hessian(p, x, u, v)
    J = -P @ Q - alpha * (np.eye(n) - P)
    eigenvalues = scipy.linalg.eigvals(J)
    reduced = Z.T @ Q @ Z
    predicted = np.concatenate([
        np.full(r, -alpha),
        -scipy.linalg.eigvalsh(reduced) if reduced.size else np.zeros(0),
    ]).astype(complex)

    fd_jac = None
    discrepancy = float("nan")
    if fd:
        solver = ActiveSetSolver()
        fd_jac = finite_difference_jacobian(lambda y: safe_gradient_field(p, y, alpha, solver=solver).xi, x)
        discrepancy = float(np.max(np.abs(J - fd_jac)))
    return JacobianReport(P=P, Q=Q, J=J, eigenvalues=eigenvalues, predicted=predicted, r=r,
                          fd_jacobian=fd_jac, fd_discrepancy=discrepancy, warnings=tuple(notes))


def exact_penalty(p: Problem, x, eps: float) -> float:
    """V = f + (sum [g_i]_+ + sum |h_j|) / eps."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = evaluate_point(p, x)
    violation = float(np.sum(np.maximum(point.g, 0.0))) + float(np.sum(np.abs(point.h)))
    return point.f + violation / eps


def exact_penalty_dini(p: Problem, x, eps: float, xi, eps_act: float = 1e-12) -> float:
    """Upper right Dini derivative of the exact penalty along xi.

    Active inequalities contribute max(grad g_i^T xi, 0) and vanishing
    equalities |grad h_j^T xi|; for xi from the safe gradient flow both
    terms are zero, which leaves the usual violated-set formula.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = evaluate_point(p, x)
    xi = np.asarray(xi, dtype=float).reshape(p.n)
    rates_g = point.jac_g @ xi
    rates_h = point.jac_h @ xi
    classes = classify_values(point.g, eps_act) if p.m else None
    penalty = 0.0
    if p.m:
        penalty += float(np.sum(rates_g[list(classes.i_plus)]))
        penalty += float(np.sum(np.maximum(rates_g[list(classes.i0)], 0.0)))
    if p.k:
        zero = np.abs(point.h) <= eps_act
        penalty += float(np.sum(np.sign(point.h[~zero]) * rates_h[~zero]))
        penalty += float(np.sum(np.abs(rates_h[zero])))
    return float(point.grad_f @ xi) + penalty / eps


@dataclass(frozen=True)
class ValueFunctionDiag:
    W: float
    grad_W: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def to_dict(self) -> dict:
        return {"W": self.W, "grad_W": self.grad_W.tolist(), "xi": self.xi.tolist(),
                "u": self.u.tolist(), "v": self.v.tolist()}


def value_function_diag(p: Problem, x, alpha: float,
                        solver: Optional[ActiveSetSolver] = None,
                        tol_rank: float = 1e-10) -> ValueFunctionDiag:
    """W = alpha f + grad f^T G + |G|^2 / 2 and grad W = -(alpha I - Q) G.

    Q is evaluated with the dual-QP multipliers at x.
    """
    point = evaluate_point(p, x)
    ev = safe_gradient_field(p, point.x, alpha, Construction.DUAL_QP, solver=solver, point=point)
    xi = ev.xi

    # rows that bind in the inner projection
    slack_g = point.jac_g @ xi + alpha * point.g
    binding = np.flatnonzero(np.abs(slack_g) <= 1e-8 * (1.0 + alpha * np.max(np.abs(point.g), initial=0.0)))
    stacked = np.vstack([point.jac_g[binding], point.jac_h])
    rank, _ = _numerical_rank(stacked, tol_rank)
    if rank < stacked.shape[0]:
        log.warning("binding constraint gradients are dependent; multipliers may not be unique")

    Q = lagrangian_hessian(p, point.x, ev.u, ev.v)
    W = alpha * point.f + float(point.grad_f @ xi) + 0.5 * float(xi @ xi)
    grad_W = -(alpha * np.eye(p.n) - Q) @ xi
    return ValueFunctionDiag(W=W, grad_W=grad_W, xi=xi, u=ev.u, v=ev.v)


def alpha_lower_bound(p: Problem, x, u, v) -> float:
    """Spectral radius of the Lagrangian Hessian at (x, u, v)."""
    Q = lagrangian_hessian(p, x, u, v)
    return float(np.max(np.abs(scipy.linalg.eigvalsh(Q))))


def lagrange_multipliers(p: Problem, x, eps_act: float = DEFAULT_EPS_ACT) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares multipliers on the active gradients (zero on inactive rows)."""
    point = evaluate_point(p, x)
    active = list(classify_values(point.g, eps_act).i0)
    M = np.vstack([point.jac_g[active], point.jac_h])
    u = np.zeros(p.m)
    if M.shape[0] == 0:
        return u, np.zeros(p.k)
    w, *_ = np.linalg.lstsq(M.T, -point.grad_f, rcond=None)
    u[active] = w[:len(active)]
    return u, w[len(active):]


def approximation_error(p: Problem, x, alphas: Sequence[float],
                        eps_act: float = DEFAULT_EPS_ACT,
                        solver: Optional[ActiveSetSolver] = None) -> np.ndarray:
    """|G_alpha(x) - Proj_T(x)(-grad f(x))| for each alpha, x feasible."""
    solver = solver or ActiveSetSolver()
    point = evaluate_point(p, x)
    target = projected_gradient_field(p, point.x, eps_act, solver=solver, point=point).xi
    errors = []
    for alpha in alphas:
        xi = safe_gradient_field(p, point.x, float(alpha), solver=solver, point=point).xi
        errors.append(float(np.linalg.norm(xi - target)))
    return np.array(errors)
