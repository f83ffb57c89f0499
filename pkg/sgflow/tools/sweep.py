"""Parameter sweeps: approximation error in alpha and Euler step size limits."""

import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from sgflow.analysis import approximation_error
from sgflow.config import Settings, thread_count
from sgflow.integrate import NoStableStepError, max_stable_stepsize
from sgflow.model import max_violation
from sgflow.qp import ActiveSetSolver, QpOptions
from sgflow.tools.common import EXIT_OK, ProblemSource, UsageError, check_dimension
from sgflow.tools.output import format_float
from sgflow.tools.report_display import show_sweep
from sgflow.utils.logging import get_logger

log = get_logger(__name__)

DEFAULT_H_GRID = tuple(float(h) for h in np.geomspace(1.0, 1e-3, 31))


def alpha_sweep(source: ProblemSource, points: Sequence[np.ndarray], alphas: Sequence[float],
                settings: Optional[Settings] = None, threads: Optional[int] = None) -> List[dict]:
    """|G_alpha(x) - Proj_T(x)(-grad f(x))| for every (alpha, x) pair."""
    settings = settings or Settings()
    p = source.problem
    for x in points:
        if max_violation(p.ineq(x), p.eq(x)) > 0:
            raise UsageError(f"alpha sweep needs feasible points, {x.tolist()} is not")
    workers = max(1, min(threads or thread_count(settings), len(points)))
    options = QpOptions(tol_kkt=settings.tol_kkt, tol_tie=settings.tol_tie, tol_rank=settings.tol_rank)

    def run(x):
        return approximation_error(p, x, alphas, settings.eps_act, ActiveSetSolver(options))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        errors = list(tqdm(pool.map(run, points), total=len(points), desc="alpha sweep",
                           unit="point", file=sys.stderr, leave=False))
    rows = []
    for index, (x, errs) in enumerate(zip(points, errors)):
        for alpha, err in zip(alphas, errs):
            rows.append({"alpha": float(alpha), "point": index, "x": x, "error": float(err)})
    return rows


def stepsize_sweep(source: ProblemSource, x0: np.ndarray, alphas: Sequence[float],
                   h_grid: Sequence[float], horizon: float = 20.0, eps_safe: float = 1e-6,
                   tol: float = 1e-3, settings: Optional[Settings] = None,
                   threads: Optional[int] = None) -> List[dict]:
    """Largest stable forward-Euler step h*(alpha) for each alpha."""
    settings = settings or Settings()
    targets = [point.x for point in source.known_kkt] or None
    workers = threads or thread_count(settings)
    options = QpOptions(tol_kkt=settings.tol_kkt, tol_tie=settings.tol_tie, tol_rank=settings.tol_rank)
    rows = []
    for alpha in tqdm(alphas, desc="step size sweep", unit="alpha", file=sys.stderr, leave=False):
        try:
            h_star = max_stable_stepsize(source.problem, x0, alpha, h_grid, horizon, eps_safe, tol,
                                         targets, workers, options)
        except NoStableStepError as e:
            log.warning(str(e))
            h_star = None
        rows.append({"alpha": float(alpha), "h_star": h_star,
                     "h_star_times_alpha": h_star * alpha if h_star is not None else None})
    return rows


def _cell(value) -> str:
    return "" if value is None else format_float(value)


def write_alpha_csv(rows: Sequence[dict], target):
    n = len(rows[0]["x"]) if rows else 0
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(["alpha", "point"] + [f"x_{i + 1}" for i in range(n)] + ["error"])
    for row in rows:
        writer.writerow([_cell(row["alpha"]), row["point"], *[_cell(v) for v in row["x"]], _cell(row["error"])])


def write_stepsize_csv(rows: Sequence[dict], target):
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(["alpha", "h_star", "h_star_times_alpha"])
    for row in rows:
        writer.writerow([_cell(row["alpha"]), _cell(row["h_star"]), _cell(row["h_star_times_alpha"])])


def _write(rows, writer, out: Optional[Path]):
    if out is None:
        writer(rows, sys.stdout)
        return
    with open(out, "w", encoding="utf-8", newline="") as f:
        writer(rows, f)
    log.info(f"sweep written to {out}")


def run_alpha_sweep(source: ProblemSource, points: Sequence[np.ndarray], alphas: Sequence[float],
                    out: Optional[Path] = None, settings: Optional[Settings] = None) -> int:
    points = [check_dimension(x, source.problem, "x") for x in points]
    rows = alpha_sweep(source, points, alphas, settings)
    _write(rows, write_alpha_csv, out)
    show_sweep(rows, f"Approximation error on {source.name}", ("alpha", "point", "error"))
    return EXIT_OK


def run_stepsize_sweep(source: ProblemSource, x0: np.ndarray, alphas: Sequence[float],
                       h_grid: Sequence[float], horizon: float = 20.0,
                       out: Optional[Path] = None, settings: Optional[Settings] = None) -> int:
    x0 = check_dimension(x0, source.problem)
    rows = stepsize_sweep(source, x0, alphas, h_grid, horizon, settings=settings)
    _write(rows, write_stepsize_csv, out)
    show_sweep(rows, f"Euler step size limit on {source.name}", ("alpha", "h_star", "h_star_times_alpha"))
    return EXIT_OK
