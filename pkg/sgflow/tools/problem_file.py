"""Loader for degree-2 problem files.

A problem file is a JSON object:

    {
      "name": "box-qp",                       optional
      "n": 2,
      "objective": {"H": [[1, 0], [0, 1]],    optional, zero when absent
                    "c": [0, 0],
                    "d": 0.0},                optional
      "inequalities": [                       a^T x - b <= 0, or with "S"
        {"a": [1, 0], "b": 1.0},              1/2 x^T S x + a^T x - b <= 0
        {"a": [0, 0], "b": 1.0, "S": [[2, 0], [0, 2]]}
      ],
      "equalities": [ ... same fields ... ],  = 0
      "x0": [0.5, 0.5]                        optional default start
    }

Matrices are row-major nested lists. Asymmetric H or S are replaced by
their symmetric part with a warning.
"""

import json
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from sgflow.model import DimensionError, Problem, QuadraticForm, quadratic_problem
from sgflow.utils.logging import get_logger

log = get_logger(__name__)

SYMMETRY_TOL = 1e-12


class ProblemFileError(Exception):
    pass


def _array(value, shape, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{where}: expected numbers")
    if arr.shape != shape:
        raise ProblemFileError(f"{where}: shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemFileError(f"{where}: non-finite entries")
    return arr


def _symmetric(S: np.ndarray, where: str) -> np.ndarray:
    asymmetry = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asymmetry > SYMMETRY_TOL:
        log.warning(f"{where}: asymmetric by {asymmetry:.3e}, using its symmetric part")
    return 0.5 * (S + S.T)


def _constraint(data, n: int, where: str) -> QuadraticForm:
    if not isinstance(data, dict) or "a" not in data:
        raise ProblemFileError(f"{where}: constraint needs at least an 'a' vector")
    unknown = set(data) - {"a", "b", "S"}
    if unknown:
        raise ProblemFileError(f"{where}: unknown fields {sorted(unknown)}")
    a = _array(data["a"], (n,), f"{where}.a")
    b = float(_array(data.get("b", 0.0), (), f"{where}.b"))
    S = None
    if data.get("S") is not None:
        S = _symmetric(_array(data["S"], (n, n), f"{where}.S"), f"{where}.S")
    return QuadraticForm(a=a, b=b, S=S)


def parse_problem(data: dict, name: str = "problem") -> Tuple[Problem, Optional[np.ndarray]]:
    """Build a Problem (and the optional default start) from parsed JSON."""
    if not isinstance(data, dict):
        raise ProblemFileError("problem file must hold a JSON object")
    if not isinstance(data.get("n"), int) or data["n"] <= 0:
        raise ProblemFileError("'n' must be a positive integer")
    n = data["n"]
    name = str(data.get("name", name))

    objective = data.get("objective", {}) or {}
    H = _array(objective.get("H", np.zeros((n, n))), (n, n), "objective.H")
    H = _symmetric(H, "objective.H")
    c = _array(objective.get("c", np.zeros(n)), (n,), "objective.c")
    d = float(_array(objective.get("d", 0.0), (), "objective.d"))

    inequalities = [_constraint(item, n, f"inequalities[{i}]")
                    for i, item in enumerate(data.get("inequalities", []) or [])]
    equalities = [_constraint(item, n, f"equalities[{j}]")
                  for j, item in enumerate(data.get("equalities", []) or [])]
    x0 = _array(data["x0"], (n,), "x0") if data.get("x0") is not None else None
    try:
        problem = quadratic_problem(H, c, d, inequalities, equalities, name=name)
    except DimensionError as e:
        raise ProblemFileError(str(e))
    return problem, x0


def load_problem_file(path: Union[str, Path]) -> Tuple[Problem, Optional[np.ndarray]]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"{path}: invalid JSON ({e})")
    problem, x0 = parse_problem(data, name=path.stem)
    log.debug(f"loaded {problem.name} from {path} (n={problem.n}, m={problem.m}, k={problem.k})")
    return problem, x0
