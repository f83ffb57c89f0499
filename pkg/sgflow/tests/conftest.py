"""Shared fixtures and a brute-force projection oracle."""

import itertools

import numpy as np
import pytest

from sgflow import corpus
from sgflow.model import quadratic_problem
from sgflow.qp import ActiveSetSolver, Polyhedron
from sgflow.utils.logging import SGFlowLoggerSetup


@pytest.fixture(autouse=True)
def _no_root_logger_setup(monkeypatch):
    # the CLI would otherwise bind a handler to the first captured stderr
    monkeypatch.setattr(SGFlowLoggerSetup, "_initialized", True)


@pytest.fixture
def fig3():
    return corpus.get("fig3")


@pytest.fixture
def solver():
    return ActiveSetSolver()


@pytest.fixture
def unconstrained():
    """f = x^2 / 2 in one dimension, minimizer 0."""
    return quadratic_problem(H=[[1.0]], c=[0.0], name="unconstrained")


def brute_force_projection(point: np.ndarray, poly: Polyhedron, tol: float = 1e-9) -> np.ndarray:
    """Projection by enumerating every subset of tight inequality rows."""
    n = poly.n
    best, best_dist = None, np.inf
    for size in range(poly.m + 1):
        for rows in itertools.combinations(range(poly.m), size):
            M = np.vstack([poly.E, poly.A[list(rows)]])
            r = np.concatenate([poly.e, poly.b[list(rows)]])
            if M.shape[0]:
                # min |xi - point| subject to M xi = r
                shift, *_ = np.linalg.lstsq(M, r - M @ point, rcond=None)
                xi = point + shift
                if np.max(np.abs(M @ xi - r)) > 1e-8:
                    continue
            else:
                xi = point.copy()
            if poly.violation(xi) > tol:
                continue
            dist = float(np.linalg.norm(xi - point))
            if dist < best_dist:
                best, best_dist = xi, dist
    assert best is not None, "oracle found no feasible candidate"
    return best


def random_polyhedron(rng: np.random.Generator, n: int, m: int, k: int = 0) -> Polyhedron:
    """Polyhedron with a known interior point."""
    interior = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = A @ interior + rng.uniform(0.0, 1.0, m)
    E = rng.normal(size=(k, n))
    e = E @ interior
    return Polyhedron.create(n, A, b, E, e)
