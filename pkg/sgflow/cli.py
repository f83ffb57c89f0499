import sys
from pathlib import Path

import click
import dotenv

from sgflow.config import load_settings
from sgflow.corpus import NotFoundError
from sgflow.flows import METHOD_NAMES, FlowSpec, FlowUndefinedError, UnsupportedProblemError
from sgflow.integrate import StepperSpec
from sgflow.qp import QpOptions
from sgflow.tools.common import (
    EXIT_FLOW_UNDEFINED,
    EXIT_IO,
    EXIT_USAGE,
    UsageError,
    check_dimension,
    parse_grid,
    parse_vector,
    resolve_problem,
)
from sgflow.tools.problem_file import ProblemFileError
from sgflow.tools.report_display import echo_error
from sgflow.utils.logging import SGFlowLoggerSetup, get_log_level


class MainGroup(click.Group):
    def list_commands(self, ctx):
        return ['flow', 'compare', 'analyze', 'sweep', 'problems']


def _qp_options(settings) -> QpOptions:
    return QpOptions(tol_kkt=settings.tol_kkt, tol_tie=settings.tol_tie, tol_rank=settings.tol_rank)


def _run(action):
    """Run a command body and map failures onto the documented exit codes."""
    try:
        code = action()
    except (UsageError, UnsupportedProblemError, ValueError) as e:
        echo_error(str(e))
        code = EXIT_USAGE
    except NotFoundError as e:
        echo_error(e.args[0] if e.args else str(e), hint="run 'sgflow problems' for the list")
        code = EXIT_USAGE
    except FlowUndefinedError as e:
        echo_error(str(e))
        code = EXIT_FLOW_UNDEFINED
    except (ProblemFileError, OSError) as e:
        echo_error(str(e))
        code = EXIT_IO
    sys.exit(code)


def flow_parameters(command):
    """Options shared by the commands that build flows."""
    options = [
        click.option('--alpha', type=float, default=None, help="Safe gradient gain alpha (default 1)"),
        click.option('--construction', type=click.Choice(['projection', 'feedback', 'dual']),
                     default=None, help="How the safe gradient flow is evaluated"),
        click.option('--mu', type=float, default=None, help="Log-barrier weight (default 0.01)"),
        click.option('--eps-pen', type=float, default=None, help="Penalty weight (default 10)"),
        click.option('--eta', type=float, default=None, help="Globally projected step (default 1)"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def stepper_parameters(command):
    options = [
        click.option('--stepper', type=str, default=None, metavar="SPEC",
                     help="euler:H, rk4:H or adaptive[:RTOL,ATOL] (default from settings)"),
        click.option('--T', 'horizon', type=float, default=None, help="Integration horizon"),
        click.option('--eps-conv', type=float, default=None, help="Stop when the flow speed drops below this"),
        click.option('--config', type=click.Path(dir_okay=False), default=None,
                     help="Settings JSON file"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group(
    cls=MainGroup,
    invoke_without_command=True,
    no_args_is_help=True,
    context_settings={'help_option_names': ['-h', '--help']},
    help=(
        "Safe gradient flow toolkit.\n\n"
        "Problems are corpus names (see 'sgflow problems') or problem JSON files. "
        "Data goes to stdout or --out files, diagnostics to stderr.\n\n"
        "Exit codes: 0 ok, 2 bad arguments, 3 flow undefined at x0, 4 file errors."
    )
)
def cli():
    """Main entry point for the sgflow CLI."""
    dotenv.load_dotenv()
    SGFlowLoggerSetup.setup(console_level=get_log_level())


@cli.command()
@click.option('--problem', required=True, help="Corpus name or problem file")
@click.option('--method', default='sgf', show_default=True, help=f"One of {', '.join(METHOD_NAMES)}")
@flow_parameters
@click.option('--x0', type=str, default=None, metavar="X", help="Start point, e.g. --x0=-0.75,0.1")
@stepper_parameters
@click.option('--out', type=click.Path(dir_okay=False), default=None,
              help="Trajectory CSV (stdout when omitted)")
@click.option('--summary', type=click.Path(dir_okay=False), default=None,
              help="JSON summary file (default: next to --out)")
def flow(problem, method, alpha, construction, mu, eps_pen, eta, x0, stepper, horizon,
         eps_conv, config, out, summary):
    """Integrate one flow from x0 and write its trajectory.

    Examples:
        # Safe gradient flow on the built-in example with RK4
        sgflow flow --problem fig3 --x0=-0.75,0.1 --stepper rk4:1e-3 --T 20

        # Log-barrier dynamics from a feasible start, trajectory to a file
        sgflow flow --problem fig3 --method log-barrier --mu 0.1 --x0 0.1,0.6 --out barrier.csv
    """
    def action():
        from sgflow.tools.flow_run import run_flow
        settings = load_settings(config)
        source = resolve_problem(problem)
        spec = FlowSpec.from_name(method, alpha=alpha, construction=construction, mu=mu,
                                  eps_pen=eps_pen, eta=eta, eps_act=settings.eps_act)
        stepper_spec = StepperSpec.from_settings(settings, stepper, horizon=horizon, eps_conv=eps_conv)
        start = check_dimension(source.start(parse_vector(x0, "x0")), source.problem)
        return run_flow(source, spec, start, stepper_spec,
                        Path(out) if out else None, Path(summary) if summary else None,
                        qp_options=_qp_options(settings))
    _run(action)


@cli.command()
@click.option('--problem', required=True, help="Corpus name or problem file")
@click.option('--methods', default=None, help="Comma-separated method names (default: all six)")
@flow_parameters
@click.option('--x0', type=str, default=None, metavar="X", help="Start point (default: a feasible start)")
@stepper_parameters
@click.option('--out-dir', type=click.Path(file_okay=False), default=None,
              help="Directory for per-method CSVs and comparison.json")
def compare(problem, methods, alpha, construction, mu, eps_pen, eta, x0, stepper, horizon,
            eps_conv, config, out_dir):
    """Run several flows from the same start and compare them."""
    def action():
        from sgflow.tools.compare import DEFAULT_METHODS, run_compare
        settings = load_settings(config)
        source = resolve_problem(problem)
        names = [m for m in (methods.split(',') if methods else DEFAULT_METHODS) if m.strip()]
        if not names:
            raise UsageError("no methods given")
        specs = [FlowSpec.from_name(name, alpha=alpha, construction=construction, mu=mu,
                                    eps_pen=eps_pen, eta=eta, eps_act=settings.eps_act)
                 for name in names]
        stepper_spec = StepperSpec.from_settings(settings, stepper, horizon=horizon, eps_conv=eps_conv)
        start = check_dimension(source.start(parse_vector(x0, "x0"), feasible=True), source.problem)
        return run_compare(source, specs, start, stepper_spec,
                           Path(out_dir) if out_dir else None, qp_options=_qp_options(settings))
    _run(action)


@cli.command()
@click.option('--problem', required=True, help="Corpus name or problem file")
@click.option('--x', 'point', type=str, required=True, metavar="X", help="Point to analyze")
@click.option('--alpha', type=float, default=1.0, show_default=True, help="Safe gradient gain")
@click.option('--u', type=str, default=None, help="Inequality multipliers (default: from the dual QP)")
@click.option('--v', type=str, default=None, help="Equality multipliers (default: from the dual QP)")
@click.option('--config', type=click.Path(dir_okay=False), default=None, help="Settings JSON file")
@click.option('--out', type=click.Path(dir_okay=False), default=None, help="JSON report (stdout when omitted)")
def analyze(problem, point, alpha, u, v, config, out):
    """KKT, constraint qualification and Jacobian diagnostics at a point."""
    def action():
        from sgflow.tools.analyze import run_analyze
        if alpha <= 0:
            raise UsageError("alpha must be positive")
        settings = load_settings(config)
        source = resolve_problem(problem)
        x = check_dimension(parse_vector(point, "x"), source.problem, "x")
        return run_analyze(source, x, alpha, parse_vector(u, "u"), parse_vector(v, "v"),
                           Path(out) if out else None, settings)
    _run(action)


@cli.command()
@click.option('--problem', required=True, help="Corpus name or problem file")
@click.option('--kind', type=click.Choice(['alpha', 'stepsize']), required=True, help="What to sweep")
@click.option('--grid', type=str, required=True, help="Comma-separated alpha values")
@click.option('--x', 'points', type=str, multiple=True, metavar="X",
              help="Feasible evaluation point (alpha sweep, repeatable)")
@click.option('--x0', type=str, default=None, metavar="X", help="Euler start point (stepsize sweep)")
@click.option('--h-grid', type=str, default=None, help="Candidate Euler steps (stepsize sweep)")
@click.option('--T', 'horizon', type=float, default=20.0, show_default=True,
              help="Horizon of each Euler run (stepsize sweep)")
@click.option('--config', type=click.Path(dir_okay=False), default=None, help="Settings JSON file")
@click.option('--out', type=click.Path(dir_okay=False), default=None, help="CSV output (stdout when omitted)")
def sweep(problem, kind, grid, points, x0, h_grid, horizon, config, out):
    """Sweep alpha for the approximation error or the Euler step size limit.

    Examples:
        sgflow sweep --problem fig3 --kind alpha --grid 1,10,100,1000 --x 0,0.5
        sgflow sweep --problem fig3 --kind stepsize --grid 1,2,4,8,16
    """
    def action():
        from sgflow.tools.sweep import DEFAULT_H_GRID, run_alpha_sweep, run_stepsize_sweep
        settings = load_settings(config)
        alphas = parse_grid(grid, "grid")
        source = resolve_problem(problem)
        target = Path(out) if out else None
        if kind == 'alpha':
            xs = [parse_vector(p, "x") for p in points]
            if not xs:
                xs = [source.start(None, feasible=True)]
            return run_alpha_sweep(source, xs, alphas, target, settings)
        steps = parse_grid(h_grid, "h-grid") if h_grid else list(DEFAULT_H_GRID)
        start = source.start(parse_vector(x0, "x0"), feasible=True)
        return run_stepsize_sweep(source, start, alphas, steps, horizon, target, settings)
    _run(action)


@cli.command()
@click.option('--verbose', '-v', is_flag=True, help="Show full provenance")
def problems(verbose):
    """List the built-in problems."""
    from sgflow.tools.report_display import problems_table
    click.echo(problems_table(verbose))


if __name__ == '__main__':
    cli()
