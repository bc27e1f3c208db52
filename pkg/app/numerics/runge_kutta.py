"""Explicit Runge-Kutta integration of linear systems y' = A(t) y.

Three modes:
  fixed     classic 4th order with a constant step and compensated updates
  adaptive  Dormand-Prince 4(5) pair with PI step-size control
  dop853    scipy's 8th order Dormand-Prince for high-accuracy reference runs
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from app.core.errors import IntegrationError, SingularPointError
from app.core.models import Checkpoint, InitialCondition, OdeSystem, RkOptions, Trajectory

logger = logging.getLogger(__name__)

# Dormand-Prince 4(5), 5th order propagation (FSAL)
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b - b_hat
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
PI_ALPHA = 0.7 / 5
PI_BETA = 0.4 / 5


class _Rhs:
    """Right-hand side with the constant per-component log offsets folded in."""

    def __init__(self, sys: OdeSystem, log_offset: np.ndarray):
        self.sys = sys
        self.log_offset = log_offset
        self.offset = log_offset[None, :] - log_offset[:, None]
        self.trivial = sys.log_scale_fn is None and not np.any(self.offset)
        self.nfev = 0

    def matrix(self, t: float) -> np.ndarray:
        M = self.sys.matrix_fn(t)
        if self.trivial:
            return M
        L = self.offset if self.sys.log_scale_fn is None else self.sys.log_scale_fn(t) + self.offset
        out = np.zeros_like(M, dtype=float)
        nz = M != 0.0
        with np.errstate(over="ignore"):
            out[nz] = M[nz] * np.exp(L[nz])
        return out

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        self.nfev += 1
        return self.matrix(t) @ y


class _Recorder:
    def __init__(self, t0: float, y0: np.ndarray, offset: np.ndarray, stride: Optional[float]):
        self.offset = offset
        self.stride = stride
        self.points: List[Checkpoint] = [Checkpoint(var=t0, state=y0.copy(), log_offset=offset.copy())]
        self.last = t0

    def record(self, t: float, y: np.ndarray, forced: bool = False) -> None:
        if t == self.points[-1].var:
            return
        if forced or (self.stride is not None and abs(t - self.last) >= self.stride):
            self.points.append(Checkpoint(var=t, state=y.copy(), log_offset=self.offset.copy()))
            self.last = t


def _check_span(sys: OdeSystem, t0: float, target: float) -> None:
    if t0 == 0.0 or target == 0.0 or (t0 > 0) != (target > 0):
        raise SingularPointError(f"cannot integrate {sys.variable_tag} from {t0} to {target} "
                                 f"through the singular point 0")


def _ordered_stops(t0: float, target: float, stops: Sequence[float]) -> List[float]:
    direction = 1.0 if target > t0 else -1.0
    inner = sorted({float(s) for s in stops if direction * (s - t0) > 0 and direction * (target - s) > 0},
                   key=lambda s: direction * s)
    return inner + [float(target)]


def rk_integrate(sys: OdeSystem, ic: InitialCondition, target: float, opts: RkOptions = RkOptions(),
                 stops: Sequence[float] = ()) -> Trajectory:
    """Integrate sys from ic.var to target, landing exactly on every stop.

    Checkpoints are stored at the start, at each stop, at the target and
    every checkpoint_stride in between.
    """
    t0 = float(ic.var)
    _check_span(sys, t0, target)
    y0 = np.asarray(ic.state, dtype=float)
    offset = np.asarray(ic.log_offset, dtype=float)
    if target == t0:
        return Trajectory(checkpoints=[Checkpoint(var=t0, state=y0.copy(), log_offset=offset.copy())])
    rhs = _Rhs(sys, offset)
    points = _ordered_stops(t0, float(target), stops)
    if opts.mode == "fixed":
        traj = _fixed(rhs, t0, y0, points, opts)
    elif opts.mode == "adaptive":
        traj = _adaptive(rhs, t0, y0, points, opts)
    else:
        traj = _dop853(rhs, t0, y0, points, opts)
    logger.debug(f"rk {opts.mode} {sys.variable_tag}: {t0} -> {target} in {traj.n_steps} steps "
                 f"({traj.n_rejected} rejected, {rhs.nfev} evaluations)")
    return traj


def _fail(msg: str, rec: _Recorder, steps: int, rejected: int):
    raise IntegrationError(msg, trajectory=Trajectory(checkpoints=rec.points, n_steps=steps, n_rejected=rejected))


def _fixed(rhs: _Rhs, t0: float, y0: np.ndarray, points: List[float], opts: RkOptions) -> Trajectory:
    rec = _Recorder(t0, y0, rhs.log_offset, opts.checkpoint_stride)
    t, y = t0, y0.copy()
    comp = np.zeros_like(y)
    steps = 0
    for stop in points:
        direction = 1.0 if stop > t else -1.0
        while direction * (stop - t) > 0:
            h = direction * min(opts.step, abs(stop - t))
            # close enough that a sliver step would only add rounding noise
            if abs(stop - (t + h)) < 1e-12 * max(1.0, abs(stop)):
                h = stop - t
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            incr = h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if opts.compensated:
                corr = incr - comp
                new = y + corr
                comp = (new - y) - corr
                y = new
            else:
                y = y + incr
            t = stop if abs(stop - (t + h)) <= 1e-15 * max(1.0, abs(stop)) else t + h
            steps += 1
            if not np.all(np.isfinite(y)):
                _fail(f"non-finite state at {t}", rec, steps, 0)
            if steps > opts.max_steps:
                _fail(f"step budget {opts.max_steps} exhausted at {t}", rec, steps, 0)
            rec.record(t, y)
        rec.record(stop, y, forced=True)
    return Trajectory(checkpoints=rec.points, n_steps=steps)


def _error_norm(err: np.ndarray, y: np.ndarray, y_new: np.ndarray, opts: RkOptions) -> float:
    scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(rhs: _Rhs, t: float, y: np.ndarray, f0: np.ndarray, span: float, opts: RkOptions) -> float:
    scale = opts.abs_tol + opts.rel_tol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, abs(span))


def _adaptive(rhs: _Rhs, t0: float, y0: np.ndarray, points: List[float], opts: RkOptions) -> Trajectory:
    rec = _Recorder(t0, y0, rhs.log_offset, opts.checkpoint_stride)
    t, y = t0, y0.copy()
    f = rhs(t, y)
    h = _initial_step(rhs, t, y, f, points[0] - t, opts)
    err_prev = 1.0
    steps = rejected = 0
    last_err = np.zeros_like(y)
    for stop in points:
        direction = 1.0 if stop > t else -1.0
        while direction * (stop - t) > 0:
            if h < 1e-14 * max(1.0, abs(t)):
                _fail(f"step size underflow at {t} (h={h:.3e})", rec, steps, rejected)
            if steps + rejected > opts.max_steps:
                _fail(f"step budget {opts.max_steps} exhausted at {t}", rec, steps, rejected)
            landing = h >= abs(stop - t)
            hs = (stop - t) if landing else direction * h
            K = [f]
            for i in range(1, 7):
                yi = y + hs * sum(a * K[j] for j, a in enumerate(DP_A[i]) if a != 0.0)
                K.append(rhs(t + DP_C[i] * hs, yi))
            y_new = y + hs * sum(b * K[j] for j, b in enumerate(DP_B) if b != 0.0)
            err_vec = hs * sum(e * K[j] for j, e in enumerate(DP_E) if e != 0.0)
            err = _error_norm(err_vec, y, y_new, opts)
            if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
                rejected += 1
                h = abs(hs) * MIN_FACTOR
                continue
            if err <= 1.0:
                t = stop if landing else t + hs
                y = y_new
                f = K[6]
                last_err = err_vec
                steps += 1
                factor = SAFETY * max(err, 1e-10) ** (-PI_ALPHA) * err_prev ** PI_BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
                err_prev = max(err, 1e-4)
                h_next = abs(hs) * factor
                # a clamped landing step says nothing about the natural step size
                h = max(h, h_next) if landing else h_next
                rec.record(t, y)
            else:
                rejected += 1
                h = abs(hs) * max(MIN_FACTOR, SAFETY * err ** -0.2)
        rec.record(stop, y, forced=True)
    return Trajectory(checkpoints=rec.points, n_steps=steps, n_rejected=rejected, local_error=last_err)


def _dop853(rhs: _Rhs, t0: float, y0: np.ndarray, points: List[float], opts: RkOptions) -> Trajectory:
    target = points[-1]
    t_eval = list(points)
    if opts.checkpoint_stride is not None:
        grid = np.arange(t0, target, math.copysign(opts.checkpoint_stride, target - t0))[1:]
        t_eval = sorted(set(t_eval) | set(grid.tolist()), key=lambda s: (s - t0) * math.copysign(1, target - t0))
    sol = solve_ivp(rhs, (t0, target), y0, method="DOP853", t_eval=t_eval, rtol=opts.rel_tol,
                    atol=opts.abs_tol, max_step=np.inf)
    offset = rhs.log_offset
    cps = [Checkpoint(var=t0, state=y0.copy(), log_offset=offset.copy())]
    for i, t in enumerate(sol.t):
        if t != cps[-1].var:
            cps.append(Checkpoint(var=float(t), state=sol.y[:, i].copy(), log_offset=offset.copy()))
    if not sol.success:
        raise IntegrationError(f"DOP853 failed: {sol.message}", trajectory=Trajectory(checkpoints=cps))
    return Trajectory(checkpoints=cps, n_steps=int(sol.nfev // 12))
