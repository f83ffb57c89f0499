import json
from pathlib import Path
from typing import Optional

import numpy as np

from sgflow.analysis import (
    alpha_lower_bound,
    check_cq,
    flow_jacobian,
    kkt_report,
    lagrange_multipliers,
    value_function_diag,
)
from sgflow.config import Settings
from sgflow.flows import Construction, FlowUndefinedError, safe_gradient_field
from sgflow.model import RankDeficientError
from sgflow.qp import ActiveSetSolver, QpOptions, QpStatus, feedback_qp
from sgflow.tools.common import EXIT_OK, ProblemSource, UsageError
from sgflow.tools.output import json_text, write_json
from sgflow.tools.report_display import show_analysis
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


def _multipliers(source: ProblemSource, x, alpha, u, v, solver, settings: Settings):
    """Given multipliers, else those of the dual QP at x, else least squares."""
    p = source.problem
    if u is not None or v is not None:
        u = np.zeros(p.m) if u is None else np.asarray(u, dtype=float)
        v = np.zeros(p.k) if v is None else np.asarray(v, dtype=float)
        if u.size != p.m or v.size != p.k:
            raise UsageError(f"{source.name} needs {p.m} inequality and {p.k} equality multipliers")
        return u, v, "given"
    try:
        ev = safe_gradient_field(p, x, alpha, Construction.DUAL_QP, solver=solver)
        return ev.u, ev.v, "dual-qp"
    except FlowUndefinedError as e:
        log.info(f"dual QP multipliers unavailable ({e}), using least squares")
        u, v = lagrange_multipliers(p, x, settings.eps_act)
        return u, v, "least-squares"


def analyze_point(source: ProblemSource, x: np.ndarray, alpha: float,
                  u=None, v=None, settings: Optional[Settings] = None) -> dict:
    """Every diagnostic at one point as a JSON-ready dict."""
    settings = settings or Settings()
    p = source.problem
    solver = ActiveSetSolver(QpOptions(tol_kkt=settings.tol_kkt, tol_tie=settings.tol_tie,
                                       tol_rank=settings.tol_rank))
    u, v, origin = _multipliers(source, x, alpha, u, v, solver, settings)
    kkt = kkt_report(p, x, u, v, tol=settings.kkt_report_tol)
    cq = check_cq(p, x, settings.eps_act, settings.tol_rank, settings.tol_cq)
    report = {
        "problem": source.name,
        "x": x,
        "alpha": alpha,
        "multipliers": origin,
        "kkt": kkt.to_dict(),
        "cq": cq.to_dict(),
        "alpha_lower_bound": alpha_lower_bound(p, x, u, v),
    }

    try:
        ev = safe_gradient_field(p, x, alpha, solver=solver)
        report["flow"] = {"xi": ev.xi, "speed": ev.speed, "u": ev.u, "v": ev.v,
                          "status": ev.status.value}
        report["value_function"] = value_function_diag(p, x, alpha, solver, settings.tol_rank).to_dict()
    except FlowUndefinedError as e:
        report["flow"] = {"xi": None, "speed": None, "status": "undefined", "reason": str(e)}
        report["value_function"] = {"W": None, "reason": str(e)}

    fb = feedback_qp(p, x, alpha, solver=solver)
    if fb.status == QpStatus.INFEASIBLE:
        report["feedback"] = {"u": None, "v": None, "status": fb.status.value}
    else:
        report["feedback"] = {"u": fb.u, "v": fb.v, "xi": fb.xi, "status": fb.status.value}

    if kkt.is_kkt:
        try:
            jac = flow_jacobian(p, x, u, v, alpha, settings.eps_act, settings.tol_rank, settings.tol_sc)
            report["jacobian"] = jac.to_dict()
        except RankDeficientError as e:
            report["jacobian_skipped"] = str(e)
    else:
        report["jacobian_skipped"] = "not a KKT point"
    return report


def run_analyze(source: ProblemSource, x: np.ndarray, alpha: float, u=None, v=None,
                out: Optional[Path] = None, settings: Optional[Settings] = None) -> int:
    report = analyze_point(source, x, alpha, u, v, settings)
    if out is not None:
        write_json(report, out)
        log.info(f"analysis written to {out}")
    else:
        print(json_text(report), end="")
    show_analysis(json.loads(json_text(report)))
    return EXIT_OK
