"""Time integration of flows with trajectory recording."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from sgflow.config import Settings, thread_count
from sgflow.flows import FlowEval, FlowKind, FlowSpec, FlowSystem, FlowUndefinedError
from sgflow.model import EvaluationError, Problem, evaluate_point
from sgflow.qp import QpOptions
from sgflow.utils.logging import get_logger

log = get_logger(__name__)


class NoStableStepError(Exception):
    pass


class TrajectoryStatus(str, Enum):
    CONVERGED = "Converged"
    HORIZON_REACHED = "HorizonReached"
    FLOW_UNDEFINED = "FlowUndefined"
    DIVERGED = "Diverged"


class StepMethod(str, Enum):
    EULER = "euler"
    RK4 = "rk4"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class StepperSpec:
    method: StepMethod = StepMethod.ADAPTIVE
    h: float = 1e-3                 # fixed step, or initial step when adaptive
    rtol: float = 1e-8
    atol: float = 1e-10
    h_max: float = 1.0
    horizon: float = 50.0
    eps_conv: float = 1e-8
    record_every: int = 1
    divergence_bound: float = 1e8
    max_steps: int = 2_000_000

    def __post_init__(self):
        for name in ("h", "rtol", "atol", "h_max", "horizon", "eps_conv", "divergence_bound"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be at least 1, got {self.record_every}")

    @classmethod
    def parse(cls, text: str, **overrides) -> "StepperSpec":
        """Parse 'euler:H', 'rk4:H', 'adaptive' or 'adaptive:RTOL,ATOL'."""
        name, _, args = text.strip().lower().partition(":")
        try:
            method = StepMethod(name)
        except ValueError:
            raise ValueError(f"unknown stepper {text!r}; use euler:H, rk4:H or adaptive[:RTOL,ATOL]")
        params = {k: v for k, v in overrides.items() if v is not None}
        try:
            if method == StepMethod.ADAPTIVE:
                if args:
                    parts = [float(a) for a in args.split(",")]
                    if len(parts) != 2:
                        raise ValueError
                    params["rtol"], params["atol"] = parts
            else:
                if not args:
                    raise ValueError
                params["h"] = float(args)
        except ValueError:
            raise ValueError(f"malformed stepper {text!r}")
        return cls(method=method, **params)

    @classmethod
    def from_settings(cls, settings: Settings, text: Optional[str] = None, **overrides) -> "StepperSpec":
        params = {
            "rtol": settings.rtol,
            "atol": settings.atol,
            "horizon": settings.horizon,
            "eps_conv": settings.eps_conv,
            "record_every": settings.record_every,
            "divergence_bound": settings.divergence_bound,
        }
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls.parse(text or settings.stepper, **params)


@dataclass(frozen=True)
class Trajectory:
    """Recorded flow solution. Row i of every array belongs to times[i]."""
    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    f: np.ndarray
    speed: np.ndarray
    max_g: np.ndarray
    norm_h: np.ndarray
    u: np.ndarray
    v: np.ndarray
    status: TrajectoryStatus
    m: int = 0
    k: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    qp_iterations: int = 0
    message: str = ""

    def __len__(self) -> int:
        return self.times.size

    @property
    def final_x(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def violations(self) -> np.ndarray:
        """Per-record max(max_i g_i, |h|_inf) over the constraints present."""
        if self.m and self.k:
            return np.maximum(self.max_g, self.norm_h)
        if self.m:
            return self.max_g
        if self.k:
            return self.norm_h
        return np.zeros_like(self.times)


class _Recorder:
    def __init__(self, system: FlowSystem):
        self.system = system
        self.rows = []

    def add(self, t: float, state: np.ndarray, rate: Optional[np.ndarray], ev: Optional[FlowEval]):
        p = self.system.problem
        x, u, v = self.system.split(state)
        if ev is not None:
            f_val, xi = ev.f, ev.xi
            u, v = ev.u, ev.v
            speed = float(np.linalg.norm(rate))
        else:
            xi = np.full(p.n, np.nan)
            speed = float("nan")
            try:
                f_val = evaluate_point(p, x).f
            except (EvaluationError, ValueError):
                f_val = float("nan")
        try:
            point = evaluate_point(p, x)
            max_g = float(np.max(point.g)) if p.m else float("nan")
            norm_h = float(np.max(np.abs(point.h))) if p.k else 0.0
        except (EvaluationError, ValueError):
            max_g = norm_h = float("nan")
        u_row = np.zeros(p.m) if np.size(u) != p.m else np.asarray(u, dtype=float)
        v_row = np.zeros(p.k) if np.size(v) != p.k else np.asarray(v, dtype=float)
        self.rows.append((t, np.array(x, dtype=float), np.array(xi, dtype=float), f_val,
                          speed, max_g, norm_h, u_row, v_row))

    def build(self, status: TrajectoryStatus, accepted: int, rejected: int, message: str) -> Trajectory:
        p = self.system.problem
        cols = list(zip(*self.rows))
        return Trajectory(
            times=np.array(cols[0], dtype=float),
            states=np.array(cols[1], dtype=float).reshape(len(self.rows), p.n),
            velocities=np.array(cols[2], dtype=float).reshape(len(self.rows), p.n),
            f=np.array(cols[3], dtype=float),
            speed=np.array(cols[4], dtype=float),
            max_g=np.array(cols[5], dtype=float),
            norm_h=np.array(cols[6], dtype=float),
            u=np.array(cols[7], dtype=float).reshape(len(self.rows), p.m),
            v=np.array(cols[8], dtype=float).reshape(len(self.rows), p.k),
            status=status, m=p.m, k=p.k,
            accepted_steps=accepted, rejected_steps=rejected,
            qp_iterations=self.system.qp_iterations, message=message,
        )


RateFn = Callable[[np.ndarray], Tuple[np.ndarray, FlowEval]]

# Dormand-Prince 5(4) tableau
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


def euler_step(rate: RateFn, y: np.ndarray, k1: np.ndarray, h: float) -> np.ndarray:
    return y + h * k1


def rk4_step(rate: RateFn, y: np.ndarray, k1: np.ndarray, h: float) -> np.ndarray:
    k2, _ = rate(y + 0.5 * h * k1)
    k3, _ = rate(y + 0.5 * h * k2)
    k4, _ = rate(y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def dopri5_step(rate: RateFn, y: np.ndarray, k1: np.ndarray, h: float):
    """One Dormand-Prince step. Returns (y5, error vector, last-stage rate and eval)."""
    ks = [k1]
    ev = None
    for i in range(1, 7):
        yi = y + h * sum(a * kj for a, kj in zip(_DP_A[i], ks))
        ki, ev = rate(yi)
        ks.append(ki)
    K = np.array(ks)
    y_new = y + h * (_DP_B5 @ K)
    err = h * (_DP_E @ K)
    return y_new, err, ks[-1], ev


def _error_norm(err, y, y_new, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def integrate(flow: FlowSpec, p: Problem, x0, s: StepperSpec,
              qp_options: Optional[QpOptions] = None,
              u0=None, v0=None) -> Trajectory:
    """Integrate the flow from x0 until convergence, horizon, failure or divergence.

    Convergence is declared when the norm of the full state rate drops to
    s.eps_conv. A flow that is undefined at x0 gives a one-record trajectory
    with status FlowUndefined.
    """
    system = FlowSystem(flow, p, qp_options)
    state = system.initial_state(x0, u0, v0)
    recorder = _Recorder(system)

    try:
        rate, ev = system.rate(state)
    except (FlowUndefinedError, EvaluationError) as e:
        recorder.add(0.0, state, None, None)
        log.info(f"{flow.label}: undefined at x0 ({e})")
        return recorder.build(TrajectoryStatus.FLOW_UNDEFINED, 0, 0, str(e))

    t = 0.0
    recorder.add(t, state, rate, ev)
    h = min(s.h, s.h_max) if s.method == StepMethod.ADAPTIVE else s.h
    accepted = rejected = 0
    status = TrajectoryStatus.HORIZON_REACHED
    message = ""
    recorded_last = True

    while True:
        if float(np.linalg.norm(rate)) <= s.eps_conv:
            status = TrajectoryStatus.CONVERGED
            break
        remaining = s.horizon - t
        if remaining <= 1e-12 * s.horizon:
            break
        if accepted >= s.max_steps:
            message = f"step budget {s.max_steps} exhausted"
            log.warning(f"{flow.label}: {message}")
            break

        h_try = min(h, remaining)
        try:
            if s.method == StepMethod.ADAPTIVE:
                new_state, h_used, h, n_rejected, stage = _adaptive_step(system.rate, state, rate, h_try, s)
                rejected += n_rejected
            else:
                step = euler_step if s.method == StepMethod.EULER else rk4_step
                new_state = step(system.rate, state, rate, h_try)
                h_used, stage = h_try, None
        except (FlowUndefinedError, EvaluationError) as e:
            status = TrajectoryStatus.FLOW_UNDEFINED
            message = str(e)
            break

        if not np.all(np.isfinite(new_state)):
            status = TrajectoryStatus.DIVERGED
            message = "state became non-finite"
            break
        projected = system.project_state(new_state)
        t += h_used
        accepted += 1
        state = projected

        if float(np.linalg.norm(system.split(state)[0])) > s.divergence_bound:
            recorder.add(t, state, None, None)
            recorded_last = True
            status = TrajectoryStatus.DIVERGED
            message = f"|x| exceeded {s.divergence_bound:g}"
            break

        try:
            if stage is not None and projected is new_state:
                rate, ev = stage
            else:
                rate, ev = system.rate(state)
        except (FlowUndefinedError, EvaluationError) as e:
            # the field has no value at the new state
            recorder.add(t, state, None, None)
            recorded_last = True
            status = TrajectoryStatus.FLOW_UNDEFINED
            message = str(e)
            break

        recorded_last = accepted % s.record_every == 0
        if recorded_last:
            recorder.add(t, state, rate, ev)

    if not recorded_last:
        recorder.add(t, state, rate, ev)
    traj = recorder.build(status, accepted, rejected, message)
    log.info(
        f"{flow.label}: {status.value} at t={traj.final_time:.6g} after {accepted} steps "
        f"({rejected} rejected, {traj.qp_iterations} qp iterations)"
    )
    return traj


def _adaptive_step(rate: RateFn, y, k1, h, s: StepperSpec):
    """Take one accepted Dormand-Prince step, shrinking h on error or domain failure."""
    h_min = 1e-14 * max(1.0, s.horizon)
    n_rejected = 0
    while True:
        try:
            y_new, err, k_last, ev = dopri5_step(rate, y, k1, h)
        except (FlowUndefinedError, EvaluationError):
            n_rejected += 1
            h *= 0.5
            log.debug(f"stage left the flow domain, halving step to {h:.3e}")
            if h < h_min:
                raise
            continue
        err_norm = _error_norm(err, y, y_new, s.rtol, s.atol)
        if err_norm <= 1.0 and np.all(np.isfinite(y_new)):
            factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            return y_new, h, min(s.h_max, h * factor), n_rejected, (k_last, ev)
        n_rejected += 1
        factor = 0.2 if not np.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
        h *= factor
        if h < h_min:
            raise FlowUndefinedError(f"step size underflow ({h:.3e})")


def invariance_margin(traj: Trajectory, since: Optional[float] = None) -> float:
    """Largest recorded constraint violation, optionally from time `since` on."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    viol = traj.violations
    if since is not None:
        viol = viol[traj.times >= since]
        if viol.size == 0:
            return float("nan")
    return float(np.nanmax(viol)) if np.any(np.isfinite(viol)) else float("nan")


def entry_time(traj: Trajectory, eps: float = 1e-6) -> Optional[float]:
    """First recorded time with violation <= eps, or None."""
    inside = np.flatnonzero(traj.violations <= eps)
    return float(traj.times[inside[0]]) if inside.size else None


def smoothness_proxy(traj: Trajectory) -> float:
    """max |xi(t_{i+1}) - xi(t_i)| / (t_{i+1} - t_i) over the recorded velocities."""
    if len(traj) < 2:
        return 0.0
    dxi = np.linalg.norm(np.diff(traj.velocities, axis=0), axis=1)
    dt = np.diff(traj.times)
    ratios = dxi / dt
    ratios = ratios[np.isfinite(ratios)]
    return float(np.max(ratios)) if ratios.size else float("nan")


@dataclass(frozen=True)
class StepsizeTrial:
    h: float
    stable: bool
    margin: float
    error: float
    status: TrajectoryStatus


def stepsize_trial(p: Problem, x0, alpha: float, h: float, horizon: float = 20.0,
                   eps_safe: float = 1e-6, tol: float = 1e-3,
                   targets: Optional[Sequence[np.ndarray]] = None,
                   qp_options: Optional[QpOptions] = None) -> StepsizeTrial:
    """Run forward Euler on the safe gradient flow and judge the step size.

    Stable means: no failure or divergence, violation within eps_safe once
    the trajectory has entered the feasible set, and the terminal point
    within tol of a target KKT point (or terminal speed <= tol without targets).
    """
    spec = FlowSpec(kind=FlowKind.SAFE_GRADIENT, alpha=alpha)
    stepper = StepperSpec(method=StepMethod.EULER, h=h, horizon=horizon, eps_conv=min(1e-8, tol))
    traj = integrate(spec, p, x0, stepper, qp_options=qp_options)
    entered = entry_time(traj, eps_safe)
    margin = invariance_margin(traj, since=entered) if entered is not None else float("inf")
    if targets:
        error = min(float(np.linalg.norm(traj.final_x - np.asarray(t, dtype=float))) for t in targets)
    else:
        error = float(traj.speed[-1])
    stable = (
        traj.status in (TrajectoryStatus.CONVERGED, TrajectoryStatus.HORIZON_REACHED)
        and entered is not None
        and margin <= eps_safe
        and error <= tol
    )
    return StepsizeTrial(h=h, stable=bool(stable), margin=margin, error=error, status=traj.status)


def max_stable_stepsize(p: Problem, x0, alpha: float, h_grid: Sequence[float],
                        horizon: float = 20.0, eps_safe: float = 1e-6, tol: float = 1e-3,
                        targets: Optional[Sequence[np.ndarray]] = None,
                        threads: Optional[int] = None,
                        qp_options: Optional[QpOptions] = None) -> float:
    """Largest grid step for which forward Euler stays safe and converges."""
    grid = sorted({float(h) for h in h_grid}, reverse=True)
    if not grid:
        raise ValueError("empty step size grid")
    if grid[-1] <= 0:
        raise ValueError("step sizes must be positive")
    workers = max(1, min(threads or thread_count(), len(grid)))

    def run(h):
        return stepsize_trial(p, x0, alpha, h, horizon, eps_safe, tol, targets, qp_options)

    # descending chunks; the first chunk holding a stable step decides
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(grid), workers):
            trials = list(pool.map(run, grid[start:start + workers]))
            for trial in trials:
                log.debug(f"alpha={alpha:g} h={trial.h:g}: stable={trial.stable} "
                          f"margin={trial.margin:.3e} error={trial.error:.3e}")
            stable = [trial.h for trial in trials if trial.stable]
            if stable:
                return max(stable)
    raise NoStableStepError(f"no stable step size in grid for alpha={alpha:g}")
