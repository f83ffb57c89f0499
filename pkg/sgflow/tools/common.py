"""Helpers shared by the command implementations."""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sgflow import corpus
from sgflow.corpus import CorpusEntry, KktPoint
from sgflow.model import Problem
from sgflow.tools.problem_file import load_problem_file

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FLOW_UNDEFINED = 3
EXIT_IO = 4


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSource:
    problem: Problem
    entry: Optional[CorpusEntry] = None
    file_x0: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return self.problem.name

    @property
    def known_kkt(self) -> Tuple[KktPoint, ...]:
        return self.entry.known_kkt if self.entry is not None else ()

    def start(self, x0: Optional[Sequence[float]], feasible: bool = False) -> np.ndarray:
        """x0 as given, else the problem's default (or feasible) start."""
        if x0 is not None:
            return np.asarray(x0, dtype=float)
        if self.entry is not None:
            return np.array(self.entry.feasible_x0 if feasible else self.entry.default_x0)
        if self.file_x0 is not None:
            return np.array(self.file_x0)
        raise UsageError(f"{self.name}: no default start point, pass --x0")

    def distance_to_kkt(self, x: np.ndarray) -> Optional[float]:
        if not self.known_kkt:
            return None
        return min(float(np.linalg.norm(x - point.x)) for point in self.known_kkt)


def resolve_problem(spec: str) -> ProblemSource:
    """A corpus name or the path of a problem file."""
    path = Path(spec)
    if path.suffix.lower() == ".json" or path.exists():
        problem, x0 = load_problem_file(path)
        return ProblemSource(problem=problem, file_x0=x0)
    entry = corpus.get(spec)
    return ProblemSource(problem=entry.problem, entry=entry)


def parse_vector(text: Optional[str], name: str = "vector") -> Optional[np.ndarray]:
    """'1,2.5,-3' -> array; None passes through."""
    if text is None:
        return None
    try:
        values = [float(part) for part in text.replace(" ", "").split(",") if part != ""]
    except ValueError:
        raise UsageError(f"{name} must be comma-separated numbers, got {text!r}")
    if not values:
        raise UsageError(f"{name} is empty")
    return np.array(values)


def parse_grid(text: Optional[str], name: str = "grid") -> List[float]:
    values = parse_vector(text, name) if text else None
    if values is None or values.size == 0:
        raise UsageError(f"{name} is empty")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise UsageError(f"{name} values must be positive")
    return [float(v) for v in values]


def check_dimension(x: np.ndarray, problem: Problem, name: str = "x0") -> np.ndarray:
    if x.size != problem.n:
        raise UsageError(f"{name} has {x.size} entries, {problem.name} has n={problem.n}")
    return x
