import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from sgflow.flows import FlowSpec
from sgflow.integrate import StepperSpec, TrajectoryStatus, integrate, invariance_margin
from sgflow.qp import QpOptions
from sgflow.tools.common import EXIT_FLOW_UNDEFINED, EXIT_OK, ProblemSource
from sgflow.tools.output import trajectory_summary, write_json, write_trajectory_csv
from sgflow.tools.report_display import echo_error, show_flow_summary
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


def run_flow(source: ProblemSource, spec: FlowSpec, x0: np.ndarray, stepper: StepperSpec,
             out: Optional[Path] = None, summary_path: Optional[Path] = None,
             qp_options: Optional[QpOptions] = None) -> int:
    """Integrate one flow, write the trajectory CSV and the JSON summary."""
    started = time.perf_counter()
    traj = integrate(spec, source.problem, x0, stepper, qp_options=qp_options)
    wall_time = time.perf_counter() - started

    summary = trajectory_summary(
        traj, wall_time,
        problem=source.name,
        method=spec.method_name,
        flow=spec.label,
        x0=x0,
        invariance_margin=invariance_margin(traj),
        distance_to_kkt=source.distance_to_kkt(traj.final_x),
    )

    if out is not None:
        write_trajectory_csv(traj, out)
        log.info(f"trajectory written to {out}")
        if summary_path is None:
            summary_path = out.with_suffix(".json")
    else:
        write_trajectory_csv(traj, sys.stdout)
    if summary_path is not None:
        write_json(summary, summary_path)
        log.info(f"summary written to {summary_path}")

    show_flow_summary(summary, spec.label)
    if traj.status == TrajectoryStatus.FLOW_UNDEFINED and traj.accepted_steps == 0:
        echo_error(f"{spec.label} is undefined at x0: {traj.message}")
        return EXIT_FLOW_UNDEFINED
    return EXIT_OK
