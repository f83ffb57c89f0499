"""Built-in benchmark problems with certified KKT data."""

import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from sgflow.analysis import kkt_report
from sgflow.model import Problem, QuadraticForm, quadratic_problem
from sgflow.qp import ActiveSetSolver
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


class NotFoundError(KeyError):
    pass


class PointKind(str, Enum):
    MIN = "min"
    MAX = "max"
    SADDLE = "saddle"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class KktPoint:
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    kind: PointKind = PointKind.MIN


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    problem: Problem
    known_kkt: Tuple[KktPoint, ...]
    convex: bool
    polyhedral_constraints: bool
    provenance: str
    default_x0: np.ndarray
    feasible_x0: np.ndarray
    box: Tuple[np.ndarray, np.ndarray]

    def sample_points(self, rng: np.random.Generator, count: int,
                      feasible: bool = False, max_tries: int = 100_000) -> np.ndarray:
        """Uniform points from the sampling box, optionally only feasible ones."""
        if feasible and self.problem.k:
            raise ValueError(f"{self.name}: cannot sample feasible points of an equality-constrained problem")
        lo, hi = self.box
        points = []
        tries = 0
        while len(points) < count:
            tries += 1
            if tries > max_tries:
                raise RuntimeError(f"{self.name}: could not draw {count} points from the box")
            x = rng.uniform(lo, hi)
            if feasible:
                g = self.problem.ineq(x)
                h = self.problem.eq(x)
                if (g.size and np.max(g) > 0) or (h.size and np.max(np.abs(h)) > 0):
                    continue
            points.append(x)
        return np.array(points)


def _point(x, u=(), v=(), kind=PointKind.MIN) -> KktPoint:
    return KktPoint(x=np.array(x, dtype=float), u=np.array(u, dtype=float),
                    v=np.array(v, dtype=float), kind=kind)


def _box(lo, hi) -> Tuple[np.ndarray, np.ndarray]:
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


def _affine(a, b=0.0) -> QuadraticForm:
    return QuadraticForm(a=np.array(a, dtype=float), b=float(b))


def _fig3() -> CorpusEntry:
    # 0 <= x1 <= x2 written as g1 = -x1, g2 = x1 - x2
    problem = quadratic_problem(
        H=0.5 * np.eye(2), c=[-0.5, 0.25],
        inequalities=[_affine([-1.0, 0.0]), _affine([1.0, -1.0])],
        name="fig3",
    )
    return CorpusEntry(
        name="fig3", problem=problem,
        known_kkt=(_point([0.25, 0.25], [0.0, 0.375]),),
        convex=True, polyhedral_constraints=True,
        provenance="f = 0.25|x|^2 - 0.5 x1 + 0.25 x2 over 0 <= x1 <= x2; the method comparison problem",
        default_x0=np.array([-0.75, 0.1]),
        feasible_x0=np.array([0.1, 0.6]),
        box=_box([-1.0, -1.0], [1.0, 1.0]),
    )


def _remark_multipliers() -> CorpusEntry:
    problem = quadratic_problem(
        H=2.0 * np.eye(2), c=[0.0, 0.0],
        inequalities=[_affine([0.0, 1.0], 1.0), _affine([0.0, -1.0], 1.0)],
        name="remark-multipliers",
    )
    return CorpusEntry(
        name="remark-multipliers", problem=problem,
        known_kkt=(_point([0.0, 0.0], [0.0, 0.0]),),
        convex=True, polyhedral_constraints=True,
        provenance="|x|^2 over -1 <= x2 <= 1; feedback controls (1, 1) are optimal but not multipliers",
        default_x0=np.array([0.5, 0.5]),
        feasible_x0=np.array([0.5, 0.5]),
        box=_box([-2.0, -2.0], [2.0, 2.0]),
    )


def _sphere_eq() -> CorpusEntry:
    problem = quadratic_problem(
        H=np.diag([1.0, 2.0, 3.0]), c=[-2.0, 0.0, 0.0],
        equalities=[QuadraticForm(a=np.zeros(3), b=1.0, S=2.0 * np.eye(3))],
        name="sphere-eq",
    )
    return CorpusEntry(
        name="sphere-eq", problem=problem,
        known_kkt=(
            _point([1.0, 0.0, 0.0], v=[0.5], kind=PointKind.MIN),
            _point([-1.0, 0.0, 0.0], v=[-1.5], kind=PointKind.UNKNOWN),
        ),
        convex=False, polyhedral_constraints=False,
        provenance="quadratic objective on the unit sphere |x|^2 = 1",
        default_x0=np.array([0.5, 0.5, 0.5]),
        feasible_x0=np.array([0.0, 0.6, 0.8]),
        box=_box([-1.5] * 3, [1.5] * 3),
    )


def _jacobian_1d() -> CorpusEntry:
    problem = quadratic_problem(H=[[1.0]], c=[-1.0], d=0.5, inequalities=[_affine([1.0])],
                                name="jacobian-1d")
    return CorpusEntry(
        name="jacobian-1d", problem=problem,
        known_kkt=(_point([0.0], [1.0]),),
        convex=True, polyhedral_constraints=True,
        provenance="f = (x - 1)^2 / 2 subject to x <= 0; strictly complementary active constraint",
        default_x0=np.array([0.5]),
        feasible_x0=np.array([-0.5]),
        box=_box([-2.0], [2.0]),
    )


def _circle_complement() -> CorpusEntry:
    problem = quadratic_problem(
        H=np.eye(2), c=[-0.5, 0.0], d=0.125,
        inequalities=[QuadraticForm(a=np.zeros(2), b=-1.0, S=-2.0 * np.eye(2))],
        name="circle-complement",
    )
    return CorpusEntry(
        name="circle-complement", problem=problem,
        known_kkt=(
            _point([1.0, 0.0], [0.25], kind=PointKind.MIN),
            _point([-1.0, 0.0], [0.75], kind=PointKind.SADDLE),
        ),
        convex=False, polyhedral_constraints=False,
        provenance="|x - (0.5, 0)|^2 / 2 outside the unit disk; nonconvex feasible set",
        default_x0=np.array([0.0, 1.5]),
        feasible_x0=np.array([0.0, 1.5]),
        box=_box([-2.0, -2.0], [2.0, 2.0]),
    )


def _rosenbrock_disk() -> CorpusEntry:
    def f(x):
        return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2

    def grad_f(x):
        return np.array([
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
            200.0 * (x[1] - x[0] ** 2),
        ])

    problem = Problem(
        n=2, f=f, grad_f=grad_f, m=1,
        g=lambda x: np.array([x @ x - 2.0]),
        jac_g=lambda x: 2.0 * np.asarray(x, dtype=float).reshape(1, 2),
        name="rosenbrock-disk",
    )
    return CorpusEntry(
        name="rosenbrock-disk", problem=problem,
        known_kkt=(_point([1.0, 1.0], [0.0]),),
        convex=False, polyhedral_constraints=False,
        provenance="Rosenbrock objective in the disk |x|^2 <= 2; second derivatives by finite differences",
        default_x0=np.array([-1.0, 0.5]),
        feasible_x0=np.array([-1.0, 0.5]),
        box=_box([-1.4, -1.4], [1.4, 1.4]),
    )


_RANDOM_QP = re.compile(r"^random-qp\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)$")


def random_qp(seed: int, n: int, m: int, k: int = 0) -> CorpusEntry:
    """Convex QP with affine constraints, strictly feasible by construction.

    The Hessian has condition number at most 1e3. The KKT point is computed
    with the active-set solver and kept only if it certifies at 1e-9.
    """
    if n < 1 or m < 0 or k < 0 or k >= n:
        raise ValueError(f"random-qp needs n >= 1, m >= 0 and 0 <= k < n (got n={n}, m={m}, k={k})")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(n, n)))
    H = basis @ np.diag(10.0 ** rng.uniform(0.0, 3.0, n)) @ basis.T
    H = 0.5 * (H + H.T)
    c = rng.normal(size=n)
    interior = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = A @ interior + rng.uniform(0.1, 1.0, m)
    E = rng.normal(size=(k, n))
    e = E @ interior
    name = f"random-qp({seed},{n},{m},{k})" if k else f"random-qp({seed},{n},{m})"
    problem = quadratic_problem(
        H=H, c=c,
        inequalities=[_affine(A[i], b[i]) for i in range(m)],
        equalities=[_affine(E[j], e[j]) for j in range(k)],
        name=name,
    )

    sol = ActiveSetSolver().solve(H, c, A, b, E, e)
    known = ()
    if sol.optimal and kkt_report(problem, sol.xi, sol.mult_ineq, sol.mult_eq, tol=1e-9).is_kkt:
        known = (KktPoint(x=sol.xi, u=sol.mult_ineq, v=sol.mult_eq, kind=PointKind.MIN),)
    else:
        log.warning(f"{name}: solver KKT point did not certify (status {sol.status.value})")
    spread = 2.0 + float(np.max(np.abs(interior)))
    return CorpusEntry(
        name=name, problem=problem, known_kkt=known,
        convex=True, polyhedral_constraints=True,
        provenance=f"generated from seed {seed}",
        default_x0=interior + rng.normal(size=n),
        feasible_x0=interior,
        box=_box(-spread * np.ones(n), spread * np.ones(n)),
    )


_REGISTRY: Dict[str, Callable[[], CorpusEntry]] = {
    "fig3": _fig3,
    "remark-multipliers": _remark_multipliers,
    "sphere-eq": _sphere_eq,
    "jacobian-1d": _jacobian_1d,
    "circle-complement": _circle_complement,
    "rosenbrock-disk": _rosenbrock_disk,
}


def list_names() -> Tuple[str, ...]:
    return tuple(_REGISTRY) + ("random-qp(seed,n,m[,k])",)


def get(name: str) -> CorpusEntry:
    key = name.strip()
    if key in _REGISTRY:
        return _REGISTRY[key]()
    match = _RANDOM_QP.match(key.replace(" ", ""))
    if match:
        seed, n, m, k = match.groups()
        return random_qp(int(seed), int(n), int(m), int(k or 0))
    raise NotFoundError(f"unknown problem {name!r}; available: {', '.join(list_names())}")


def find_builtin(name: str) -> Optional[CorpusEntry]:
    """A fixed registry entry, or None for generated and unknown names."""
    builder = _REGISTRY.get(name)
    return builder() if builder is not None else None
