import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from sgflow.flows import FlowSpec, UnsupportedProblemError
from sgflow.integrate import (
    StepperSpec,
    entry_time,
    integrate,
    invariance_margin,
    smoothness_proxy,
)
from sgflow.qp import QpOptions
from sgflow.tools.common import EXIT_OK, ProblemSource
from sgflow.tools.output import write_json, write_trajectory_csv
from sgflow.tools.report_display import show_comparison
from sgflow.utils.logging import get_logger

log = get_logger(__name__)

DEFAULT_METHODS = ("sgf", "projected-gradient", "log-barrier", "l2-penalty",
                   "saddle-point", "globally-projected")


def _file_stem(method: str, seen: Counter) -> str:
    """sgf:dual -> sgf-dual; repeats get -2, -3, ..."""
    stem = method.replace(":", "-")
    seen[stem] += 1
    return stem if seen[stem] == 1 else f"{stem}-{seen[stem]}"


def compare_methods(source: ProblemSource, specs: Sequence[FlowSpec], x0: np.ndarray,
                    stepper: StepperSpec, out_dir: Optional[Path] = None,
                    entry_eps: float = 1e-6,
                    qp_options: Optional[QpOptions] = None) -> List[dict]:
    """Run each flow from x0; methods that reject the problem become 'unsupported' rows."""
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    stems = Counter()
    for spec in specs:
        row = {"method": spec.method_name, "flow": spec.label}
        try:
            traj = integrate(spec, source.problem, x0, stepper, qp_options=qp_options)
        except UnsupportedProblemError as e:
            log.info(f"{spec.label}: unsupported on {source.name} ({e})")
            row.update(status="unsupported", reason=str(e))
            rows.append(row)
            continue

        entered = entry_time(traj, entry_eps)
        row.update(
            status=traj.status.value,
            converged_to=traj.final_x,
            final_time=traj.final_time,
            distance_to_kkt=source.distance_to_kkt(traj.final_x),
            invariance_margin=invariance_margin(traj),
            entry_time=entered,
            post_entry_margin=invariance_margin(traj, since=entered) if entered is not None else None,
            smoothness=smoothness_proxy(traj),
            qp_iterations=traj.qp_iterations,
        )
        if traj.message:
            row["message"] = traj.message
        if out_dir is not None:
            path = out_dir / f"{_file_stem(spec.method_name, stems)}.csv"
            write_trajectory_csv(traj, path)
            row["trajectory_file"] = path.name
        rows.append(row)
    return rows


def run_compare(source: ProblemSource, specs: Sequence[FlowSpec], x0: np.ndarray,
                stepper: StepperSpec, out_dir: Optional[Path] = None,
                qp_options: Optional[QpOptions] = None) -> int:
    rows = compare_methods(source, specs, x0, stepper, out_dir, qp_options=qp_options)
    payload = {"problem": source.name, "x0": x0, "methods": rows}
    if out_dir is not None:
        write_json(payload, out_dir / "comparison.json")
        log.info(f"comparison written to {out_dir / 'comparison.json'}")
    write_json(payload, sys.stdout)
    show_comparison(rows, source.name)
    return EXIT_OK
