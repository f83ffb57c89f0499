"""Dense strictly convex quadratic programming.

The engine is a primal active-set method for

    minimize 1/2 z^T H z + c^T z  subject to  C z <= d,  D z = e

with multipliers following the stationarity convention

    H z + c + C^T u + D^T v = 0,  u >= 0.

Projection onto a polyhedron (H = I, c = -point), the feedback QP over the
admissible control set and the (u, v) dual QP are all solved with it.
"""

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from sgflow.model import PointData, Problem, evaluate_point
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    DEGENERATE = "Degenerate"
    ITER_LIMIT = "IterLimit"
    UNBOUNDED = "Unbounded"


class QpError(Exception):
    pass


class QpInfeasibleError(QpError):
    def __init__(self, message: str, certificate: Optional[np.ndarray] = None):
        super().__init__(message)
        self.certificate = certificate


class QpIterationLimitError(QpError):
    pass


class QpDegenerateError(QpError):
    pass


class QpUnboundedError(QpError):
    def __init__(self, message: str, ray: Optional[np.ndarray] = None):
        super().__init__(message)
        self.ray = ray


def _matrix(value, cols: int) -> np.ndarray:
    if value is None:
        return np.zeros((0, cols))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, cols) if arr.size else np.zeros((0, cols))
    return arr


def _vector(value, size: int) -> np.ndarray:
    if value is None:
        return np.zeros(size)
    return np.asarray(value, dtype=float).reshape(-1)


@dataclass(frozen=True)
class Polyhedron:
    """{xi : A xi <= b, E xi = e}."""
    A: np.ndarray
    b: np.ndarray
    E: np.ndarray
    e: np.ndarray

    @classmethod
    def create(cls, n: int, A=None, b=None, E=None, e=None) -> "Polyhedron":
        A = _matrix(A, n)
        E = _matrix(E, n)
        return cls(A=A, b=_vector(b, A.shape[0]), E=E, e=_vector(e, E.shape[0]))

    def __post_init__(self):
        if self.A.ndim != 2 or self.E.ndim != 2:
            raise ValueError("A and E must be matrices")
        if self.A.shape[1] != self.E.shape[1]:
            raise ValueError(f"A has {self.A.shape[1]} columns, E has {self.E.shape[1]}")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError(f"b has shape {self.b.shape}, expected ({self.A.shape[0]},)")
        if self.e.shape != (self.E.shape[0],):
            raise ValueError(f"e has shape {self.e.shape}, expected ({self.E.shape[0]},)")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.E.shape[0]

    def violation(self, xi: np.ndarray) -> float:
        viol = 0.0
        if self.m:
            viol = max(viol, float(np.max(self.A @ xi - self.b)))
        if self.k:
            viol = max(viol, float(np.max(np.abs(self.E @ xi - self.e))))
        return viol


@dataclass(frozen=True)
class QpOptions:
    tol_kkt: float = 1e-9
    tol_tie: float = 1e-10
    tol_feas: float = 1e-9          # scaled by (1 + |rhs|_inf)
    tol_rank: float = 1e-10
    regularization: float = 1e-12   # singular Hessians, factorization only
    max_iter: Optional[int] = None  # default 50 (m + k + 1)

    def iteration_cap(self, m: int, k: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 50 * (m + k + 1)


@dataclass(frozen=True)
class QpSolution:
    xi: np.ndarray
    mult_ineq: np.ndarray
    mult_eq: np.ndarray
    working_set: Tuple[int, ...]
    status: QpStatus
    kkt_residual: float
    objective: float = float("nan")
    iterations: int = 0
    certificate: Optional[np.ndarray] = None
    degenerate: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == QpStatus.OPTIMAL

    def raise_for_status(self) -> "QpSolution":
        if self.status == QpStatus.INFEASIBLE:
            raise QpInfeasibleError("constraint polyhedron is empty", self.certificate)
        if self.status == QpStatus.ITER_LIMIT:
            raise QpIterationLimitError(f"no convergence in {self.iterations} iterations")
        if self.status == QpStatus.DEGENERATE:
            raise QpDegenerateError(f"kkt residual {self.kkt_residual:.3e} after factorization failure")
        if self.status == QpStatus.UNBOUNDED:
            raise QpUnboundedError("objective unbounded below", self.certificate)
        return self


@dataclass(frozen=True)
class DualSolution:
    u: np.ndarray
    v: np.ndarray
    status: QpStatus
    objective: float
    kkt_residual: float
    iterations: int = 0
    ray: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FeedbackSolution:
    u: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int = 0


@dataclass
class _Workspace:
    """Per-solve data shared by the helper methods of ActiveSetSolver."""
    H: np.ndarray
    H_fact: np.ndarray
    c: np.ndarray
    C: np.ndarray
    d: np.ndarray
    D: np.ndarray
    e: np.ndarray
    eq_rows: list
    tol_feas: float
    scale: float
    degenerate: bool = False


class ActiveSetSolver:
    """Primal active-set QP solver with a dense KKT factorization per iteration.

    An instance holds mutable workspace (counters and the last terminal
    working set, tried first on the next solve); use one instance per thread.
    """

    def __init__(self, options: Optional[QpOptions] = None):
        self.log = get_logger(__name__)
        self.options = options or QpOptions()
        self.solves = 0
        self.total_iterations = 0
        self.phase1_solves = 0
        self._last_working_set = None
        self._last_shape = None

    def reset_hint(self):
        self._last_working_set = None
        self._last_shape = None

    # ------------------------------------------------------------------ helpers

    def _independent(self, basis: np.ndarray, row: np.ndarray) -> bool:
        norm = float(np.linalg.norm(row))
        if norm <= self.options.tol_rank:
            return False
        if basis.shape[0] == 0:
            return True
        coef, *_ = np.linalg.lstsq(basis.T, row, rcond=None)
        residual = row - basis.T @ coef
        return float(np.linalg.norm(residual)) > self.options.tol_rank * max(1.0, norm)

    def _select_rows(self, ws: _Workspace, candidates: Sequence[int]) -> Tuple[list, bool]:
        """Keep, in index order, the inequality rows independent of the equalities and each other."""
        basis = ws.D[ws.eq_rows]
        kept = []
        dropped = False
        for i in sorted(candidates):
            if self._independent(basis, ws.C[i]):
                kept.append(i)
                basis = np.vstack([basis, ws.C[i]])
            else:
                dropped = True
        return kept, dropped

    def _eqp(self, ws: _Workspace, W: Sequence[int]):
        """Minimize the objective with the equalities and rows W held tight."""
        n = ws.c.size
        M = np.vstack([ws.D[ws.eq_rows], ws.C[list(W)]])
        r = np.concatenate([ws.e[ws.eq_rows], ws.d[list(W)]])
        p = M.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = ws.H_fact
        K[:n, n:] = M.T
        K[n:, :n] = M
        rhs = np.concatenate([-ws.c, r])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                sol = scipy.linalg.solve(K, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            ws.degenerate = True
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        z = sol[:n]
        lam = sol[n:]
        n_eq = len(ws.eq_rows)
        return z, lam[:n_eq], lam[n_eq:]

    def _feasible(self, ws: _Workspace, z: np.ndarray) -> bool:
        if ws.C.shape[0] and np.max(ws.C @ z - ws.d) > ws.tol_feas:
            return False
        if ws.D.shape[0] and np.max(np.abs(ws.D @ z - ws.e)) > ws.tol_feas:
            return False
        return True

    def _phase_one(self, ws: _Workspace):
        """Least-violation LP. Returns (point, None) or (None, farkas_certificate)."""
        self.phase1_solves += 1
        C, d, D, e = ws.C, ws.d, ws.D, ws.e
        n = ws.c.size
        m, k = C.shape[0], D.shape[0]
        cost = np.concatenate([np.zeros(n), np.ones(m + 2 * k)])
        A_ub = b_ub = A_eq = b_eq = None
        if m:
            A_ub = np.hstack([C, -np.eye(m), np.zeros((m, 2 * k))])
            b_ub = d
        if k:
            A_eq = np.hstack([D, np.zeros((k, m)), -np.eye(k), np.eye(k)])
            b_eq = e
        bounds = [(None, None)] * n + [(0, None)] * (m + 2 * k)
        res = linprog(
            cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            self.log.warning(f"phase-1 lp failed: {res.message}")
            return None, None
        if res.fun > ws.tol_feas:
            y_ineq = -np.asarray(res.ineqlin.marginals) if m else np.zeros(0)
            y_eq = -np.asarray(res.eqlin.marginals) if k else np.zeros(0)
            return None, np.concatenate([y_ineq, y_eq])
        return res.x[:n], None

    def _residual(self, ws: _Workspace, z, u, v) -> float:
        stationarity = ws.H @ z + ws.c + ws.C.T @ u + ws.D.T @ v
        parts = [float(np.max(np.abs(stationarity))) if z.size else 0.0]
        if ws.C.shape[0]:
            slack = ws.C @ z - ws.d
            parts.append(max(0.0, float(np.max(slack))) / ws.scale)
            parts.append(max(0.0, -float(np.min(u))))
            parts.append(float(np.max(np.abs(u * slack))) / ws.scale)
        if ws.D.shape[0]:
            parts.append(float(np.max(np.abs(ws.D @ z - ws.e))) / ws.scale)
        return max(parts)

    def _polish(self, ws: _Workspace, W: list, z, u, v):
        """Re-solve the terminal equality problem without regularization (min-norm)."""
        n = z.size
        M = np.vstack([ws.D[ws.eq_rows], ws.C[W]])
        r = np.concatenate([ws.e[ws.eq_rows], ws.d[W]])
        p = M.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = ws.H
        K[:n, n:] = M.T
        K[n:, :n] = M
        sol, *_ = np.linalg.lstsq(K, np.concatenate([-ws.c, r]), rcond=None)
        z_new = sol[:n]
        lam = sol[n:]
        n_eq = len(ws.eq_rows)
        if W and np.min(lam[n_eq:]) < -self.options.tol_kkt:
            return z, u, v
        if not self._feasible(ws, z_new):
            return z, u, v
        u_new = np.zeros_like(u)
        u_new[W] = lam[n_eq:]
        v_new = np.zeros_like(v)
        v_new[ws.eq_rows] = lam[:n_eq]
        if self._residual(ws, z_new, u_new, v_new) < self._residual(ws, z, u, v):
            return z_new, u_new, v_new
        return z, u, v

    # ------------------------------------------------------------------ solver

    def solve(self, H, c, C=None, d=None, D=None, e=None,
              hint: Optional[Sequence[int]] = None,
              initial_point: Optional[np.ndarray] = None,
              singular: bool = False) -> QpSolution:
        """Solve the convex QP. Set `singular` when H is only positive semidefinite."""
        opts = self.options
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.size
        H = np.asarray(H, dtype=float).reshape(n, n)
        C = _matrix(C, n)
        D = _matrix(D, n)
        d = _vector(d, C.shape[0])
        e = _vector(e, D.shape[0])
        m, k = C.shape[0], D.shape[0]
        self.solves += 1

        scale = 1.0 + max(float(np.max(np.abs(d))) if m else 0.0,
                          float(np.max(np.abs(e))) if k else 0.0)
        H_fact = H
        if singular:
            H_fact = H + opts.regularization * max(1.0, float(np.max(np.abs(H))) if n else 1.0) * np.eye(n)
        ws = _Workspace(H=H, H_fact=H_fact, c=c, C=C, d=d, D=D, e=e, eq_rows=[],
                        tol_feas=opts.tol_feas * scale, scale=scale)

        basis = np.zeros((0, n))
        for j in range(k):
            if self._independent(basis, D[j]):
                ws.eq_rows.append(j)
                basis = np.vstack([basis, D[j]])
            else:
                ws.degenerate = True

        start = self._starting_point(ws, hint, initial_point)
        if start is None:
            point, certificate = self._phase_one(ws)
            if point is None:
                status = QpStatus.INFEASIBLE if certificate is not None else QpStatus.DEGENERATE
                if status == QpStatus.INFEASIBLE:
                    self.log.debug("qp infeasible after phase 1")
                return QpSolution(
                    xi=np.full(n, np.nan), mult_ineq=np.zeros(m), mult_eq=np.zeros(k),
                    working_set=(), status=status, kkt_residual=float("inf"),
                    certificate=certificate, degenerate=ws.degenerate,
                )
            active = [i for i in range(m) if C[i] @ point - d[i] >= -ws.tol_feas]
            W, dropped = self._select_rows(ws, active)
            ws.degenerate = ws.degenerate or dropped
            start = (point, W)
        z, W = start
        z = np.array(z, dtype=float)
        W = list(W)

        cap = opts.iteration_cap(m, k)
        iterations = 0
        status = QpStatus.ITER_LIMIT
        lam_eq = np.zeros(len(ws.eq_rows))
        lam_in = np.zeros(len(W))
        while iterations < cap:
            iterations += 1
            z_w, lam_eq, lam_in = self._eqp(ws, W)
            direction = z_w - z
            if np.linalg.norm(direction) > 1e-14 * (1.0 + np.linalg.norm(z)):
                alpha, blocking = self._ratio_test(ws, W, z, direction)
                if blocking is not None:
                    z = z + alpha * direction
                    W, dropped = self._select_rows(ws, W + [blocking])
                    if dropped:
                        ws.degenerate = True
                    continue
            z = z_w
            if len(W) == 0 or float(np.min(lam_in)) >= -opts.tol_kkt:
                status = QpStatus.OPTIMAL
                break
            lowest = float(np.min(lam_in))
            ties = [W[j] for j in range(len(W)) if lam_in[j] <= lowest + opts.tol_tie]
            W.remove(min(ties))
        self.total_iterations += iterations

        u = np.zeros(m)
        v = np.zeros(k)
        if len(W) == len(lam_in):
            u[W] = lam_in
        v[ws.eq_rows] = lam_eq
        if singular and status == QpStatus.OPTIMAL:
            z, u, v = self._polish(ws, W, z, u, v)
        residual = self._residual(ws, z, u, v)
        if status == QpStatus.OPTIMAL and residual > opts.tol_kkt:
            self.log.warning(f"qp kkt residual {residual:.3e} above tolerance {opts.tol_kkt:.1e}")
            status = QpStatus.DEGENERATE
        elif status == QpStatus.ITER_LIMIT:
            self.log.error(f"qp iteration limit {cap} reached")

        self._last_working_set = tuple(W)
        self._last_shape = (n, m, k)
        return QpSolution(
            xi=z, mult_ineq=u, mult_eq=v, working_set=tuple(sorted(W)), status=status,
            kkt_residual=residual, objective=0.5 * float(z @ H @ z) + float(c @ z),
            iterations=iterations, degenerate=ws.degenerate,
        )

    def _starting_point(self, ws: _Workspace, hint, initial_point):
        """A feasible point with a working set, without phase 1 when possible."""
        n = ws.c.size
        m = ws.C.shape[0]
        if initial_point is not None:
            z0 = np.asarray(initial_point, dtype=float).reshape(n)
            if self._feasible(ws, z0):
                active = [i for i in range(m) if ws.C[i] @ z0 - ws.d[i] >= -ws.tol_feas]
                W, _ = self._select_rows(ws, active)
                return z0, W
        if hint is None and self._last_shape == (n, m, ws.D.shape[0]):
            hint = self._last_working_set
        candidates = []
        if hint:
            W, _ = self._select_rows(ws, [i for i in hint if 0 <= i < m])
            candidates.append(W)
        candidates.append([])
        for W in candidates:
            z_w, _, _ = self._eqp(ws, W)
            if np.all(np.isfinite(z_w)) and self._feasible(ws, z_w):
                return z_w, W
        return None

    def _ratio_test(self, ws: _Workspace, W: list, z, direction):
        """Longest step <= 1 along direction; returns (alpha, blocking index or None)."""
        m = ws.C.shape[0]
        in_w = set(W)
        best = 1.0
        blocking = []
        dnorm = float(np.linalg.norm(direction))
        for i in range(m):
            if i in in_w:
                continue
            rate = float(ws.C[i] @ direction)
            if rate <= 1e-13 * max(1.0, float(np.linalg.norm(ws.C[i]))) * dnorm:
                continue
            slack = max(0.0, float(ws.d[i] - ws.C[i] @ z))
            ratio = slack / rate
            if ratio < best - self.options.tol_tie:
                best = ratio
                blocking = [i]
            elif ratio <= best + self.options.tol_tie and ratio < 1.0:
                blocking.append(i)
        if not blocking:
            return 1.0, None
        return best, min(blocking)

    # --------------------------------------------------------- specializations

    def project(self, point, poly: Polyhedron, hint: Optional[Sequence[int]] = None) -> QpSolution:
        """Euclidean projection of point onto poly with multipliers."""
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.size != poly.n:
            raise ValueError(f"point has {point.size} entries, polyhedron has n={poly.n}")
        sol = self.solve(np.eye(poly.n), -point, poly.A, poly.b, poly.E, poly.e, hint=hint)
        if sol.status == QpStatus.INFEASIBLE:
            return sol
        objective = 0.5 * float(np.sum((sol.xi - point) ** 2))
        return QpSolution(
            xi=sol.xi, mult_ineq=sol.mult_ineq, mult_eq=sol.mult_eq,
            working_set=sol.working_set, status=sol.status, kkt_residual=sol.kkt_residual,
            objective=objective, iterations=sol.iterations, degenerate=sol.degenerate,
        )

    def solve_dual(self, gram, lin, m: int) -> DualSolution:
        """Minimize 1/2 w^T gram w + lin^T w over w = (u, v) with u >= 0 (first m entries)."""
        gram = np.asarray(gram, dtype=float)
        lin = np.asarray(lin, dtype=float).reshape(-1)
        size = lin.size
        if gram.shape != (size, size):
            raise ValueError(f"gram has shape {gram.shape}, expected {(size, size)}")
        if not 0 <= m <= size:
            raise ValueError(f"m={m} outside [0, {size}]")
        gram_norm = float(np.max(np.abs(gram))) if size else 0.0
        if size and np.max(np.abs(gram - gram.T)) > 1e-10 * (1.0 + gram_norm):
            raise ValueError("gram must be symmetric")
        gram = 0.5 * (gram + gram.T)
        if size == 0:
            return DualSolution(u=np.zeros(0), v=np.zeros(0), status=QpStatus.OPTIMAL,
                                objective=0.0, kkt_residual=0.0)
        eigvals, eigvecs = scipy.linalg.eigh(gram)
        if eigvals[0] < -1e-9 * max(1.0, gram_norm):
            raise ValueError(f"gram is not positive semidefinite (eigenvalue {eigvals[0]:.3e})")

        ray = self._dual_ray(eigvals, eigvecs, lin, m)
        if ray is not None:
            self.log.debug("dual qp unbounded")
            return DualSolution(u=np.zeros(m), v=np.zeros(size - m), status=QpStatus.UNBOUNDED,
                                objective=-float("inf"), kkt_residual=float("inf"), ray=ray)

        bounds = np.hstack([-np.eye(m), np.zeros((m, size - m))])
        sol = self.solve(gram, lin, bounds, np.zeros(m), singular=True,
                         initial_point=np.zeros(size))
        return DualSolution(
            u=sol.xi[:m], v=sol.xi[m:], status=sol.status, objective=sol.objective,
            kkt_residual=sol.kkt_residual, iterations=sol.iterations,
        )

    def _dual_ray(self, eigvals, eigvecs, lin, m) -> Optional[np.ndarray]:
        """A direction w in ker(gram), w_u >= 0, with lin^T w < 0, if one exists."""
        top = max(1.0, float(eigvals[-1]))
        kernel = eigvecs[:, eigvals <= self.options.tol_rank * top]
        if kernel.shape[1] == 0:
            return None
        reduced = kernel.T @ lin
        if np.linalg.norm(reduced) <= self.options.tol_kkt * (1.0 + np.linalg.norm(lin)):
            return None
        A_ub = -kernel[:m] if m else None
        b_ub = np.zeros(m) if m else None
        res = linprog(reduced, A_ub=A_ub, b_ub=b_ub,
                      bounds=[(-1.0, 1.0)] * kernel.shape[1], method="highs")
        if res.status != 0 or res.fun >= -self.options.tol_kkt * (1.0 + np.linalg.norm(lin)):
            return None
        return kernel @ res.x


def project(point, poly: Polyhedron, opts: Optional[QpOptions] = None,
            hint: Optional[Sequence[int]] = None) -> QpSolution:
    """Project point onto poly; see ActiveSetSolver.project."""
    return ActiveSetSolver(opts).project(point, poly, hint=hint)


def solve_dual(gram, lin, m: int, opts: Optional[QpOptions] = None) -> DualSolution:
    """Solve the (u, v) dual QP; see ActiveSetSolver.solve_dual."""
    return ActiveSetSolver(opts).solve_dual(gram, lin, m)


def feedback_qp(p: Problem, x, alpha: float,
                point: Optional[PointData] = None,
                solver: Optional[ActiveSetSolver] = None) -> FeedbackSolution:
    """Least-norm control (u, v) in the admissible set K_alpha(x).

    Minimizes |jac_g^T u + jac_h^T v|^2 over u >= 0 and
        -jac_g M^T w <= jac_g grad_f - alpha g,  -jac_h M^T w = jac_h grad_f - alpha h
    with w = (u, v) and M = [jac_g; jac_h]. The closed-loop velocity
    -grad_f - M^T w is returned alongside.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    point = point if point is not None else evaluate_point(p, x)
    solver = solver or ActiveSetSolver()
    m, k = p.m, p.k
    if m + k == 0:
        return FeedbackSolution(u=np.zeros(0), v=np.zeros(0), xi=-np.array(point.grad_f),
                                status=QpStatus.OPTIMAL, kkt_residual=0.0)

    M = point.constraint_jacobian
    gram = M @ M.T
    C = np.vstack([-gram[:m], np.hstack([-np.eye(m), np.zeros((m, k))])])
    d = np.concatenate([point.jac_g @ point.grad_f - alpha * point.g, np.zeros(m)])
    D = -gram[m:]
    e = point.jac_h @ point.grad_f - alpha * point.h
    sol = solver.solve(gram, np.zeros(m + k), C, d, D, e, singular=True)
    if sol.status == QpStatus.INFEASIBLE:
        return FeedbackSolution(u=np.zeros(m), v=np.zeros(k), xi=np.full(p.n, np.nan),
                                status=sol.status, kkt_residual=sol.kkt_residual,
                                iterations=sol.iterations)
    w = sol.xi
    return FeedbackSolution(
        u=w[:m], v=w[m:], xi=-point.grad_f - M.T @ w, status=sol.status,
        kkt_residual=sol.kkt_residual, iterations=sol.iterations,
    )
