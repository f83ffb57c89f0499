"""Trajectory CSV and JSON summaries.

Floats are written with repr(), the shortest decimal string that reads
back to the same double. Files are UTF-8 with LF line endings.
"""

import csv
import io
import json
import math
from pathlib import Path
from typing import IO, Dict, List, Optional, Union

import numpy as np

from sgflow.integrate import Trajectory

RUNNING = "Running"


def format_float(value: float) -> str:
    return repr(float(value))


def trajectory_header(n: int) -> List[str]:
    return ["t"] + [f"x_{i + 1}" for i in range(n)] + ["f", "speed", "max_g", "norm_h", "status"]


def _rows(traj: Trajectory):
    last = len(traj) - 1
    for i in range(len(traj)):
        status = traj.status.value if i == last else RUNNING
        numbers = [traj.times[i], *traj.states[i], traj.f[i], traj.speed[i], traj.max_g[i], traj.norm_h[i]]
        yield [format_float(v) for v in numbers] + [status]


def write_trajectory_csv(traj: Trajectory, target: Union[str, Path, IO[str]]):
    """Write t, x_1..x_n, f, speed, max_g, norm_h, status; status is Running until the last row."""
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as f:
            write_trajectory_csv(traj, f)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(trajectory_header(traj.states.shape[1]))
    writer.writerows(_rows(traj))


def trajectory_csv_text(traj: Trajectory) -> str:
    buffer = io.StringIO()
    write_trajectory_csv(traj, buffer)
    return buffer.getvalue()


def read_trajectory_csv(source: Union[str, Path, IO[str]]) -> Dict[str, np.ndarray]:
    """Parse a trajectory file back into arrays keyed by column group."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as f:
            return read_trajectory_csv(f)
    reader = csv.reader(source)
    header = next(reader)
    n = len(header) - 6
    rows = [row for row in reader if row]
    numeric = np.array([[float(v) for v in row[:-1]] for row in rows], dtype=float).reshape(-1, n + 5)
    return {
        "times": numeric[:, 0],
        "states": numeric[:, 1:n + 1],
        "f": numeric[:, n + 1],
        "speed": numeric[:, n + 2],
        "max_g": numeric[:, n + 3],
        "norm_h": numeric[:, n + 4],
        "status": np.array([row[-1] for row in rows]),
    }


def _clean(value):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def json_text(payload) -> str:
    return json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n"


def write_json(payload, target: Optional[Union[str, Path, IO[str]]] = None):
    text = json_text(payload)
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    elif target is not None:
        target.write(text)
    return text


def trajectory_summary(traj: Trajectory, wall_time: float, **extra) -> dict:
    summary = {
        "status": traj.status.value,
        "final_time": traj.final_time,
        "final_x": traj.final_x,
        "final_f": traj.f[-1],
        "final_speed": traj.speed[-1],
        "records": len(traj),
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "qp_iterations": traj.qp_iterations,
        "wall_time": wall_time,
    }
    if traj.u.shape[1]:
        summary["final_u"] = traj.u[-1]
    if traj.v.shape[1]:
        summary["final_v"] = traj.v[-1]
    if traj.message:
        summary["message"] = traj.message
    summary.update(extra)
    return summary
