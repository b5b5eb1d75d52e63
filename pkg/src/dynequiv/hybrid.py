"""Closed-loop surrogate simulation, trajectory loss, adjoint gradients.

The hybrid state is z = [x_in, x_ex]: internal machine states followed by
tie-line currents. The surrogate drives x_ex while the retained physics
drives x_in:

    d x_in / dt = P(x_in, x_ex)            (internal swing dynamics)
    d x_ex / dt = N_theta(x_ex, s_in)      (network; s_in = features(x_in, x_ex))

The training loss compares both blocks against reference samples at every
grid point i >= 1 using per-feature normalized, non-squared Euclidean
norms. Its gradient with respect to theta is obtained with the continuous
adjoint: two costates (mu for x_in, lam for x_ex) integrated backward over
each step with the transpose of the trapezoidal update, picking up jump
increments at every sample, while a trapezoidal quadrature accumulates
lam^T dN/dtheta. Because the backward step is the exact transpose of the
forward one, the result matches finite differences of the discretized loss
to solver tolerance rather than to O(h^2). Modes:

  pi    physics-informed closed loop, exact internal Jacobians
  pg    same sweep with the internal-physics Jacobian blocks replaced by a
        constant estimate (the forward pass still uses true physics)
  open  x_ex-only fit against replayed measured features; mu plays no role

The adjoint dynamics are linear in the costates, so each backward step
assembles the hybrid Jacobian once per endpoint and performs one small
dense solve.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DivergenceError
from .integrators import TimeGrid, integrate_stages, DEFAULT_TOL, DEFAULT_MAX_ITER
from .mlp import Mlp, forward, forward_cached, jacobian_input, vjp_theta_sum
from .physics import InternalSystem
from .grid import FaultScenario

LOSS_EPS = 1e-12


@dataclass
class HybridState:
    x_in: np.ndarray
    x_ex: np.ndarray
    t: float = 0.0

    def packed(self) -> np.ndarray:
        return np.concatenate([self.x_in, self.x_ex], axis=-1)


@dataclass
class AdjointState:
    lam: np.ndarray         # costate of x_ex
    mu: np.ndarray          # costate of x_in
    grad_theta: np.ndarray


@dataclass
class TrainingSet:
    """Reference trajectories for a batch of scenarios on one grid.

    All arrays are stacked over scenarios: x_*_hat have shape
    (B, n_steps + 1, dim). eq_* hold the shared pre-fault operating point
    of each scenario; the loss scales are frozen statistics of this set.
    """

    grid: TimeGrid
    stage_of_step: np.ndarray
    x_ex_hat: np.ndarray
    x_in_hat: np.ndarray
    s_hat: np.ndarray
    eq_x_ex: np.ndarray
    eq_x_in: np.ndarray
    eq_s: np.ndarray
    alpha: np.ndarray
    scenarios: tuple[FaultScenario, ...]
    x_ex_scale: np.ndarray
    x_in_scale: np.ndarray

    @property
    def n_scenarios(self) -> int:
        return self.x_ex_hat.shape[0]

    @property
    def dim_ex(self) -> int:
        return self.x_ex_hat.shape[-1]

    @property
    def dim_in(self) -> int:
        return self.x_in_hat.shape[-1]

    @property
    def dim_s(self) -> int:
        return self.s_hat.shape[-1]

    def z0(self) -> np.ndarray:
        return np.concatenate([self.x_in_hat[:, 0], self.x_ex_hat[:, 0]], axis=-1)

    def truncated(self, n_steps: int) -> "TrainingSet":
        """Prefix covering the first n_steps integration steps.

        Loss scales stay frozen at the full-window statistics so that a
        model fitted on the prefix optimizes the same objective it is
        later evaluated with.
        """
        if not 0 < n_steps <= self.grid.n_steps:
            raise ConfigError(
                f"truncation to {n_steps} steps outside 1..{self.grid.n_steps}")
        if n_steps == self.grid.n_steps:
            return self
        grid = TimeGrid(self.grid.t0, self.grid.t0 + n_steps * self.grid.h,
                        self.grid.h)
        return dataclasses.replace(
            self, grid=grid,
            stage_of_step=self.stage_of_step[..., :n_steps],
            x_ex_hat=self.x_ex_hat[:, :n_steps + 1],
            x_in_hat=self.x_in_hat[:, :n_steps + 1],
            s_hat=self.s_hat[:, :n_steps + 1])

    def model_widths(self, hidden: Sequence[int]) -> tuple[int, ...]:
        return (self.dim_ex + self.dim_s, *hidden, self.dim_ex)


def check_model_dims(model: Mlp, dataset: TrainingSet) -> None:
    want_in = dataset.dim_ex + dataset.dim_s
    if model.n_in != want_in or model.n_out != dataset.dim_ex:
        raise ConfigError(
            f"model maps {model.n_in}->{model.n_out}, dataset needs "
            f"{want_in}->{dataset.dim_ex}")


def simulate_closed_loop(
    model: Mlp,
    insys: InternalSystem,
    x0,
    grid: TimeGrid,
    stage_of_step: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    mask_failures: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the hybrid system; x0 is a HybridState or packed array.

    Features are recomputed from the current iterate inside every corrector
    iteration. Returns (trajectory (..., n_steps+1, d), alive mask).
    """
    if isinstance(x0, HybridState):
        x0 = x0.packed()
    d_in = 2 * insys.n_machines

    def rhs(z, t, stage):
        x_in = z[..., :d_in]
        x_ex = z[..., d_in:]
        s = insys.features(x_in, x_ex, stage)
        u = np.concatenate([x_ex, s], axis=-1)
        dx_ex = forward(model, u)
        dx_in = insys.rhs(x_in, x_ex, stage)
        return np.concatenate([dx_in, dx_ex], axis=-1)

    return integrate_stages(rhs, x0, grid, stage_of_step,
                            tol=tol, max_iter=max_iter, mask_failures=mask_failures)


def split_hybrid(traj: np.ndarray, d_in: int) -> tuple[np.ndarray, np.ndarray]:
    return traj[..., :d_in], traj[..., d_in:]


def trajectory_loss(
    x_ex_traj: np.ndarray,
    x_in_traj: np.ndarray | None,
    dataset: TrainingSet,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-scenario loss and its per-sample gradients.

    loss_b = sum_{i>=1} ( ||(x_ex,i - ref)/scale||_2 + ||(x_in,i - ref)/scale||_2 )

    Passing x_in_traj=None drops the internal term (open-loop fit). Returns
    (loss (B,), dl/dx_ex (B, n+1, dex), dl/dx_in (B, n+1, din)); the i = 0
    sample carries no loss.
    """
    u_ex = (x_ex_traj - dataset.x_ex_hat) / dataset.x_ex_scale
    norm_ex = np.linalg.norm(u_ex, axis=-1)
    dl_ex = u_ex / (np.maximum(norm_ex, LOSS_EPS)[..., None] * dataset.x_ex_scale)
    dl_ex[:, 0] = 0.0
    loss = norm_ex[:, 1:].sum(axis=1)
    dl_in = np.zeros_like(dataset.x_in_hat)
    if x_in_traj is not None:
        u_in = (x_in_traj - dataset.x_in_hat) / dataset.x_in_scale
        norm_in = np.linalg.norm(u_in, axis=-1)
        dl_in = u_in / (np.maximum(norm_in, LOSS_EPS)[..., None] * dataset.x_in_scale)
        dl_in[:, 0] = 0.0
        loss = loss + norm_in[:, 1:].sum(axis=1)
    return loss, dl_ex, dl_in


def _assemble_hybrid_jacobian(
    model: Mlp,
    insys: InternalSystem,
    z: np.ndarray,
    stage,
    phys_jac: np.ndarray | None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Jacobian of the hybrid rhs at one time slice, plus the MLP cache.

    phys_jac, when given, is the constant estimate A with columns ordered
    [x_ex | x_in]; it replaces the internal-physics blocks only. The
    feature chain and the network's own Jacobians are always exact.
    """
    d_in = 2 * insys.n_machines
    x_in = z[..., :d_in]
    x_ex = z[..., d_in:]
    d_ex = x_ex.shape[-1]
    s = insys.features(x_in, x_ex, stage)
    u = np.concatenate([x_ex, s], axis=-1)
    _, cache = forward_cached(model, u)
    ju = jacobian_input(model, u)
    jn_ex_direct = ju[..., :d_ex]
    jn_s = ju[..., d_ex:]
    js_in, js_ex = insys.feature_jacobians(x_in, stage)
    jn_in = np.einsum("...os,...si->...oi", jn_s, js_in)
    jn_ex = jn_ex_direct + np.einsum("...os,...si->...oi", jn_s, js_ex)
    if phys_jac is None:
        jp_in, jp_ex = insys.jacobians(x_in, x_ex, stage)
    else:
        jp_ex = np.broadcast_to(phys_jac[:, :d_ex], z.shape[:-1] + (d_in, d_ex))
        jp_in = np.broadcast_to(phys_jac[:, d_ex:], z.shape[:-1] + (d_in, d_in))
    top = np.concatenate([jp_in, jp_ex], axis=-1)
    bottom = np.concatenate([jn_in, jn_ex], axis=-1)
    return np.concatenate([top, bottom], axis=-2), cache


def _sweep_costates(j_top_all, j_bot_all, dl_all, h, times):
    """Backward sweep of the transposed trapezoidal update with jumps.

    For each segment i (top endpoint i, bottom i-1) this solves
    (I - h/2 J_i)^T zeta_i = lam_i and propagates
    lam_{i-1} = (I + h/2 J_{i-1})^T zeta_i + dl_{i-1}, the exact transpose
    of the forward step, so the resulting gradient matches finite
    differences of the discretized loss to solver tolerance. Returns the
    per-segment costates zeta (b, n, d) and the costate at t0.
    """
    b, n, d, _ = j_top_all.shape
    eye = np.eye(d)
    m_top = np.swapaxes(eye - 0.5 * h * j_top_all, -1, -2)
    a = dl_all[:, n]
    zeta_all = np.empty((b, n, d))
    for i in range(n, 0, -1):
        try:
            zeta = np.linalg.solve(m_top[:, i - 1], a[..., None])[..., 0]
        except np.linalg.LinAlgError:
            t = float(times[i - 1])
            raise DivergenceError(f"singular implicit step in adjoint at t={t}", t=t)
        zeta_all[:, i - 1] = zeta
        a = zeta + 0.5 * h * np.einsum(
            "...ij,...i->...j", j_bot_all[:, i - 1], zeta)
        if i - 1 >= 1:
            a = a + dl_all[:, i - 1]
    if not np.all(np.isfinite(zeta_all)):
        raise DivergenceError("adjoint left the finite range")
    return zeta_all, a


def adjoint_gradient(
    model: Mlp,
    insys: InternalSystem,
    traj: np.ndarray,
    dataset: TrainingSet,
    *,
    phys_jac: np.ndarray | None = None,
    alive: np.ndarray | None = None,
    return_adjoint: bool = False,
):
    """Loss and d(loss)/d(theta) for a simulated closed-loop batch.

    The costates are swept backward segment by segment; at each sample time
    the loss gradients enter as jump increments. Both Jacobian assemblies of
    a segment use that segment's network stage, mirroring the forward
    integrator exactly; the theta-quadrature contracts dN/dtheta at both
    endpoints against the segment costate. Jacobians and caches for all
    segments are assembled in one vectorized pass and the quadrature is
    reduced in two batched calls, leaving only small solves in the
    sequential sweep. Per-scenario losses and gradients are averaged over
    alive scenarios.

    Returns (loss, grad_theta, per_scenario_loss) and, with
    return_adjoint=True, also the AdjointState at t0 whose costates are the
    loss sensitivities to the initial hybrid state.
    """
    d_in = 2 * insys.n_machines
    x_in_traj, x_ex_traj = split_hybrid(traj, d_in)
    loss_b, dl_ex, dl_in = trajectory_loss(x_ex_traj, x_in_traj, dataset)
    b = dataset.n_scenarios
    if alive is None:
        alive = np.ones(b, dtype=bool)
    h = dataset.grid.h
    stages = dataset.stage_of_step

    j_top_all, cache_top = _assemble_hybrid_jacobian(
        model, insys, traj[:, 1:], stages, phys_jac)
    j_bot_all, cache_bot = _assemble_hybrid_jacobian(
        model, insys, traj[:, :-1], stages, phys_jac)
    dl_all = np.concatenate([dl_in, dl_ex], axis=-1)
    zeta_all, a0 = _sweep_costates(j_top_all, j_bot_all, dl_all, h,
                                   dataset.grid.times())
    zeta_ex = zeta_all[..., d_in:]
    grad_b = 0.5 * h * (vjp_theta_sum(model, cache_top, zeta_ex)
                        + vjp_theta_sum(model, cache_bot, zeta_ex))

    n_alive = int(np.sum(alive))
    if n_alive == 0:
        raise DivergenceError("no scenario survived the closed-loop simulation")
    loss = float(np.sum(np.where(alive, loss_b, 0.0)) / n_alive)
    grad = np.sum(np.where(alive[:, None], grad_b, 0.0), axis=0) / n_alive
    result = (loss, grad, loss_b)
    if return_adjoint:
        adj = AdjointState(lam=a0[..., d_in:].copy(), mu=a0[..., :d_in].copy(),
                           grad_theta=grad_b.copy())
        return result + (adj,)
    return result


def simulate_open_loop(
    model: Mlp,
    dataset: TrainingSet,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    mask_failures: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate d x_ex/dt = N(x_ex, s_hat(t)) with replayed features."""
    grid = dataset.grid
    s_hat = dataset.s_hat

    def rhs(x_ex, t, stage):
        idx = int(round((t - grid.t0) / grid.h))
        u = np.concatenate([x_ex, s_hat[:, idx]], axis=-1)
        return forward(model, u)

    return integrate_stages(rhs, dataset.x_ex_hat[:, 0], grid, dataset.stage_of_step,
                            tol=tol, max_iter=max_iter, mask_failures=mask_failures)


def open_loop_gradient(
    model: Mlp,
    traj_ex: np.ndarray,
    dataset: TrainingSet,
    *,
    alive: np.ndarray | None = None,
):
    """Adjoint gradient of the x_ex-only loss with replayed features.

    The costate mu never appears: replayed features carry no state
    dependence, so the backward sweep only needs dN/dx_ex at the stored
    points.
    """
    loss_b, dl_ex, _ = trajectory_loss(traj_ex, None, dataset)
    b = dataset.n_scenarios
    if alive is None:
        alive = np.ones(b, dtype=bool)
    h = dataset.grid.h

    u_all = np.concatenate([traj_ex, dataset.s_hat], axis=-1)
    _, cache_all = forward_cached(model, u_all)
    j_all = jacobian_input(model, u_all)[..., :dataset.dim_ex]
    zeta_all, _ = _sweep_costates(j_all[:, 1:], j_all[:, :-1], dl_ex, h,
                                  dataset.grid.times())
    cache_top = [c[:, 1:] for c in cache_all]
    cache_bot = [c[:, :-1] for c in cache_all]
    grad_b = 0.5 * h * (vjp_theta_sum(model, cache_top, zeta_all)
                        + vjp_theta_sum(model, cache_bot, zeta_all))

    n_alive = int(np.sum(alive))
    if n_alive == 0:
        raise DivergenceError("no scenario survived the open-loop simulation")
    loss = float(np.sum(np.where(alive, loss_b, 0.0)) / n_alive)
    grad = np.sum(np.where(alive[:, None], grad_b, 0.0), axis=0) / n_alive
    return loss, grad, loss_b
