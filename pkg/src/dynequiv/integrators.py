"""Implicit trapezoidal integration on a fixed grid, forward and backward.

The corrector is a plain damped fixed-point iteration: for the grids and
step sizes this package ships, the contraction factor (h/2)*||df/dx|| stays
well below one, so Newton machinery would buy nothing. Steps are accepted
when the max-norm of the fixed-point update falls under `tol`.

Event times (fault application and clearing) are snapped to grid points and
each step uses a single right-hand side on both endpoints, so trajectories
have exact one-sided derivatives at switching instants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, NonconvergenceError

DEFAULT_TOL = 1e-10
# Trained surrogate fields can push the fixed-point contraction factor close
# to 1 without leaving the trapezoidal stability region; the cap must leave
# room for slow geometric convergence, not just the ~6 iterations physics
# right-hand sides need.
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0+h, ..., tn; (tn - t0)/h must be an integer."""

    t0: float
    tn: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError(f"step size must be positive, got {self.h}")
        if not self.tn > self.t0:
            raise ConfigError("grid end must exceed its start")
        n = (self.tn - self.t0) / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
            raise ConfigError(
                f"grid span {self.tn - self.t0} is not an integer multiple of h={self.h}")

    @property
    def n_steps(self) -> int:
        return int(round((self.tn - self.t0) / self.h))

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def nearest_index(self, t: float) -> int:
        """Grid index closest to t; t must fall inside the grid span."""
        if t < self.t0 - 0.5 * self.h or t > self.tn + 0.5 * self.h:
            raise ConfigError(f"time {t} lies outside the grid [{self.t0}, {self.tn}]")
        return int(min(max(round((t - self.t0) / self.h), 0), self.n_steps))

    def snap(self, t: float) -> float:
        return self.t0 + self.h * self.nearest_index(t)


def trapezoidal_step(
    f: Callable[[np.ndarray, float], np.ndarray],
    x: np.ndarray,
    t: float,
    h: float,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = 1.0,
) -> np.ndarray:
    """One implicit trapezoidal step from (x, t) to t + h.

    h may be negative (used by the backward adjoint sweep). Raises
    DivergenceError if iterates leave the finite range, NonconvergenceError
    if the fixed point is not reached within max_iter.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x, t))
    base = x + 0.5 * h * f0
    xc = x + h * f0
    delta = math.inf
    for _ in range(max_iter):
        xn = base + 0.5 * h * np.asarray(f(xc, t + h))
        if damping != 1.0:
            xn = xc + damping * (xn - xc)
        if not np.all(np.isfinite(xn)):
            raise DivergenceError(f"trapezoidal iterate left the finite range at t={t}", t=t)
        delta = float(np.max(np.abs(xn - xc)))
        xc = xn
        if delta <= tol:
            return xc
    raise NonconvergenceError(
        f"trapezoidal corrector did not converge at t={t} (residual {delta:.3e})",
        residual=delta, t=t)


def integrate(
    f,
    x0: np.ndarray,
    grid: TimeGrid,
    events: Sequence[float] = (),
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Integrate over the grid, switching right-hand sides at event times.

    f is either a single callable (x, t) -> dx/dt, or a sequence of
    len(events) + 1 callables, one per segment. Events are snapped to grid
    points; the step leaving a boundary already uses the next segment's f.
    Returns the trajectory with shape (n_steps + 1,) + x0.shape.
    """
    if callable(f):
        fs = [f] * (len(events) + 1)
    else:
        fs = list(f)
        if len(fs) != len(events) + 1:
            raise ConfigError(
                f"got {len(fs)} right-hand sides for {len(events)} events")
    cuts = [grid.nearest_index(t) for t in events]
    if sorted(cuts) != cuts:
        raise ConfigError("event times must be non-decreasing")
    seg_of_step = np.zeros(grid.n_steps, dtype=int)
    for c in cuts:
        seg_of_step[c:] += 1

    x0 = np.asarray(x0, dtype=float)
    traj = np.empty((grid.n_steps + 1,) + x0.shape)
    traj[0] = x0
    times = grid.times()
    for i in range(grid.n_steps):
        fi = fs[seg_of_step[i]]
        traj[i + 1] = trapezoidal_step(fi, traj[i], times[i], grid.h,
                                       tol=tol, max_iter=max_iter)
    return traj


def integrate_stages(
    rhs,
    x0: np.ndarray,
    grid: TimeGrid,
    stage_of_step: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    mask_failures: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched trapezoidal integration with a per-step stage index.

    rhs(x, t, stage) must accept states shaped (..., d) with stage an int
    array over the leading axes (or a scalar). stage_of_step has shape
    (n_steps,) or leading + (n_steps,).

    With mask_failures=True, rows whose iterates go non-finite or whose
    corrector stalls are frozen at their last finite state and reported
    through the returned boolean `alive` mask instead of raising; dead rows
    stop being advanced. Returns (trajectory, alive).
    """
    x0 = np.asarray(x0, dtype=float)
    lead = x0.shape[:-1]
    n = grid.n_steps
    stage_of_step = np.asarray(stage_of_step)
    traj = np.empty(lead + (n + 1, x0.shape[-1]))
    traj[..., 0, :] = x0
    alive = np.ones(lead, dtype=bool)
    times = grid.times()
    half = 0.5 * grid.h

    for i in range(n):
        stage = stage_of_step[..., i] if stage_of_step.ndim > 1 else stage_of_step[i]
        x_prev = traj[..., i, :]
        f0 = rhs(x_prev, times[i], stage)
        ok = np.all(np.isfinite(f0), axis=-1) & alive
        base = x_prev + half * np.where(ok[..., None], f0, 0.0)
        xc = np.where(ok[..., None], x_prev + grid.h * f0, x_prev)
        residual = np.zeros(lead)
        for _ in range(max_iter):
            fx = rhs(xc, times[i + 1], stage)
            xn = base + half * fx
            finite = np.all(np.isfinite(xn), axis=-1)
            ok = ok & finite
            xn = np.where(ok[..., None], xn, x_prev)
            residual = np.where(ok, np.max(np.abs(xn - xc), axis=-1), 0.0)
            xc = xn
            if np.max(residual, initial=0.0) <= tol:
                break
        stalled = ok & (residual > tol)
        if not mask_failures:
            if np.any(alive & ~ok):
                raise DivergenceError(
                    f"trajectory left the finite range at t={times[i + 1]}",
                    t=float(times[i + 1]))
            if np.any(stalled):
                raise NonconvergenceError(
                    f"corrector did not converge at t={times[i + 1]} "
                    f"(residual {float(np.max(residual)):.3e})",
                    residual=float(np.max(residual)), t=float(times[i + 1]))
        ok = ok & ~stalled
        xc = np.where(ok[..., None], xc, x_prev)
        alive = ok
        traj[..., i + 1, :] = xc
        if mask_failures and not np.any(alive):
            # freeze the remainder of every trajectory
            traj[..., i + 1:, :] = traj[..., i:i + 1, :]
            break
    return traj, alive


def integrate_adjoint_segment(
    adjoint_rhs: Callable[[np.ndarray, float], np.ndarray],
    terminal: np.ndarray,
    t_start: float,
    t_end: float,
    h: float,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Integrate a forward-time rhs backward from t_start down to t_end.

    Takes trapezoidal steps of size -h, so a state with constant forward
    rhs c changes by -(t_start - t_end)*c. Raises on non-finite adjoints.
    """
    if not h > 0:
        raise ConfigError("segment step must be positive")
    span = t_start - t_end
    if span <= 0:
        raise ConfigError("backward segment must have t_start > t_end")
    n = span / h
    if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
        raise ConfigError("segment span is not an integer multiple of h")
    x = np.asarray(terminal, dtype=float)
    t = t_start
    for _ in range(int(round(n))):
        try:
            x = trapezoidal_step(adjoint_rhs, x, t, -h, tol=tol, max_iter=max_iter)
        except DivergenceError as exc:
            raise DivergenceError(f"adjoint diverged at t={t - h}", t=t - h) from exc
        t -= h
    return x
