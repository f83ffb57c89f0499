"""Human-readable tables on stderr."""

from typing import Iterable, Optional

from rich.console import Console
from rich.table import Table
from tabulate import tabulate

from sgflow import corpus

console = Console(stderr=True)


def _fmt(value, digits: int = 6) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "[green]yes[/]" if value else "[red]no[/]"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    if isinstance(value, complex):
        if value.imag == 0:
            return f"{value.real:.{digits}g}"
        return f"{value.real:.{digits}g}{value.imag:+.{digits}g}j"
    if isinstance(value, (list, tuple)):
        return "(" + ", ".join(_fmt(v, digits) for v in value) + ")"
    return str(value)


def _status(status: str) -> str:
    colors = {"Converged": "green", "HorizonReached": "yellow", "FlowUndefined": "red",
              "Diverged": "red", "unsupported": "dim"}
    color = colors.get(status, "white")
    return f"[{color}]{status}[/]"


def show_flow_summary(summary: dict, label: str):
    tbl = Table(title=f"Flow {label}", show_header=True, header_style="bold magenta")
    tbl.add_column("Field", justify="left")
    tbl.add_column("Value", justify="right")
    tbl.add_row("status", _status(summary["status"]))
    for key in ("final_time", "final_x", "final_f", "final_speed", "distance_to_kkt",
                "invariance_margin", "accepted_steps", "rejected_steps", "qp_iterations", "wall_time"):
        if key in summary:
            value = summary[key]
            tbl.add_row(key, _fmt(value.tolist() if hasattr(value, "tolist") else value))
    console.print(tbl)


def show_comparison(rows: Iterable[dict], problem_name: str):
    tbl = Table(title=f"Method comparison on {problem_name}", show_header=True, header_style="bold magenta")
    for name, justify in (("Method", "left"), ("Status", "center"), ("Final x", "right"),
                          ("Dist. to x*", "right"), ("Margin", "right"),
                          ("Post-entry margin", "right"), ("Smoothness", "right")):
        tbl.add_column(name, justify=justify)
    for row in rows:
        tbl.add_row(
            row["method"], _status(row["status"]), _fmt(row.get("converged_to"), 4),
            _fmt(row.get("distance_to_kkt"), 3), _fmt(row.get("invariance_margin"), 3),
            _fmt(row.get("post_entry_margin"), 3), _fmt(row.get("smoothness"), 3),
        )
    console.print(tbl)


def show_analysis(report: dict):
    kkt = report["kkt"]
    tbl = Table(title=f"Analysis of {report['problem']} at {_fmt(report['x'], 6)}",
                show_header=True, header_style="bold blue")
    tbl.add_column("Check", justify="left")
    tbl.add_column("Value", justify="right")
    tbl.add_row("KKT", _fmt(kkt["is_kkt"]))
    tbl.add_row("  stationarity", _fmt(kkt["stationarity_residual"], 3))
    tbl.add_row("  primal infeasibility", _fmt(kkt["primal_infeasibility"], 3))
    tbl.add_row("  dual infeasibility", _fmt(kkt["dual_infeasibility"], 3))
    tbl.add_row("  complementarity", _fmt(kkt["complementarity"], 3))
    tbl.add_row("multipliers (u, v)", f"{_fmt(kkt['u'])} {_fmt(kkt['v'])}")
    cq = report["cq"]
    tbl.add_row("LICQ", _fmt(cq["licq"]))
    tbl.add_row("MFCQ", _fmt(cq["mfcq"]))
    tbl.add_row("EMFCQ", _fmt(cq["emfcq"]))
    tbl.add_row("|G_alpha(x)|", _fmt(report["flow"]["speed"], 3))
    tbl.add_row("feedback controls", f"{_fmt(report['feedback']['u'])} {_fmt(report['feedback']['v'])}")
    tbl.add_row("W_alpha", _fmt(report["value_function"]["W"]))
    jac = report.get("jacobian")
    if jac is not None:
        spectrum = ", ".join(_fmt(complex(re, im), 6) for re, im in jac["eigenvalues"])
        tbl.add_row("spectrum", spectrum)
        tbl.add_row("predicted", ", ".join(_fmt(complex(re, im), 6) for re, im in jac["predicted"]))
        tbl.add_row("fd discrepancy", _fmt(jac["fd_discrepancy"], 3))
    elif report.get("jacobian_skipped"):
        tbl.add_row("jacobian", f"[dim]{report['jacobian_skipped']}[/]")
    console.print(tbl)


def show_sweep(rows: Iterable[dict], title: str, columns: Iterable[str]):
    columns = list(columns)
    tbl = Table(title=title, show_header=True, header_style="bold magenta")
    for name in columns:
        tbl.add_column(name, justify="right")
    for row in rows:
        tbl.add_row(*[_fmt(row.get(name), 6) for name in columns])
    console.print(tbl)


def problems_table(verbose: bool = False) -> str:
    rows = []
    for name in corpus.list_names():
        entry = corpus.find_builtin(name)
        if entry is None:
            rows.append([name, "-", "-", "-", "yes", "yes", "generated convex QP"])
            continue
        p = entry.problem
        rows.append([name, p.n, p.m, p.k, "yes" if entry.convex else "no",
                     "yes" if entry.polyhedral_constraints else "no",
                     entry.provenance if verbose else entry.provenance.split(";")[0]])
    return tabulate(rows, headers=["Problem", "n", "m", "k", "Convex", "Polyhedral", "Description"],
                    tablefmt="simple")


def echo_error(message: str, hint: Optional[str] = None):
    console.print(f"[red]error:[/] {message}")
    if hint:
        console.print(f"[yellow]{hint}[/]")
