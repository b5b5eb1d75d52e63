"""Discrete-time surrogate baseline.

Instead of a vector field, this baseline learns the one-step map
x_ex,i+1 = x_ex,i + D_phi(x_ex,i, s_in,i) on teacher-forced sample pairs
(the residual parameterization keeps the map well-scaled at small steps).
Closed-loop evaluation alternates one implicit trapezoidal step of the
internal physics, with the tie currents held at their step-start values,
and one surrogate step. One-step accuracy and closed-loop behavior are
reported separately; the gap between them is the point of the comparison.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import TrainingFailureError
from .hybrid import TrainingSet, check_model_dims
from .integrators import DEFAULT_TOL, DEFAULT_MAX_ITER
from .mlp import Mlp, forward, forward_cached, init_mlp, set_normalization, vjp_theta_sum
from .physics import InternalSystem
from .training import TrainResult, _Adam, _descend, DEFAULT_EPOCHS, DEFAULT_CLIP

DISCRETE_LR = 3e-3
BLOWUP_FACTOR = 1e3


def _pair_mask(dataset: TrainingSet) -> np.ndarray:
    """Flat mask of step pairs that do not straddle a network switching.

    Measured tie currents jump when the admittance changes, so the pair
    spanning a fault application or clearing is not a sample of any
    single-step flow map and would poison the regression.
    """
    stages = dataset.stage_of_step
    if stages.ndim == 1:
        stages = np.broadcast_to(stages, (dataset.n_scenarios, stages.shape[0]))
    nxt = np.concatenate([stages[:, 1:], stages[:, -1:]], axis=1)
    return (stages == nxt).reshape(-1)


def prepare_discrete_model(hidden, dataset: TrainingSet,
                           rng: np.random.Generator) -> Mlp:
    """Residual one-step model with data-driven normalization."""
    model = init_mlp(dataset.model_widths(tuple(hidden)), rng)
    u = np.concatenate([dataset.x_ex_hat, dataset.s_hat], axis=-1)
    flat = u.reshape(-1, u.shape[-1])
    res = np.diff(dataset.x_ex_hat, axis=1).reshape(-1, dataset.dim_ex)
    res = res[_pair_mask(dataset)]
    out_scale = np.maximum(res.std(axis=0), 1e-9)
    return set_normalization(model, in_offset=flat.mean(axis=0),
                             in_scale=np.maximum(flat.std(axis=0), 1e-6),
                             out_offset=np.zeros(dataset.dim_ex),
                             out_scale=out_scale)


def _one_step_pairs(dataset: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    u = np.concatenate([dataset.x_ex_hat[:, :-1], dataset.s_hat[:, :-1]], axis=-1)
    res = np.diff(dataset.x_ex_hat, axis=1)
    keep = _pair_mask(dataset)
    return (u.reshape(-1, u.shape[-1])[keep],
            res.reshape(-1, res.shape[-1])[keep])


def train_discrete(
    model: Mlp,
    dataset: TrainingSet,
    *,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DISCRETE_LR,
    clip: float = DEFAULT_CLIP,
    plateau_rel: float = 1e-6,
    patience: int = 50,
    batch: int | None = None,
    rng: np.random.Generator | None = None,
    log=None,
) -> TrainResult:
    """Teacher-forced residual fit by mean-squared normalized error.

    With batch=None every epoch takes one full-batch step. Otherwise each
    epoch shuffles the pairs (rng required, for reproducibility) and steps
    once per minibatch; the logged loss and gradient norm are epoch means.
    """
    check_model_dims(model, dataset)
    inputs, targets = _one_step_pairs(dataset)

    def batch_grad(m: Mlp, u, t) -> tuple[float, np.ndarray]:
        y, cache = forward_cached(m, u)
        err = (y - t) / m.out_scale
        loss = float(np.mean(err * err))
        w_out = (2.0 / err.size) * err / m.out_scale
        grad = vjp_theta_sum(m, [c[None] for c in cache], w_out[None])[0]
        return loss, grad

    if batch is None:
        return _descend(model, lambda m: batch_grad(m, inputs, targets),
                        epochs=epochs, lr=lr, clip=clip,
                        plateau_rel=plateau_rel, patience=patience, log=log)

    if rng is None:
        raise ValueError("minibatch training needs an rng for shuffling")
    adam = _Adam(lr=lr)
    theta = model.theta.copy()
    best_theta = theta.copy()
    best_loss = np.inf
    best_epoch = -1
    stall = 0
    history: list[tuple[int, float, float]] = []
    stop_reason = "max_epochs"
    n = inputs.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        losses, gnorms = [], []
        for k in range(0, n, batch):
            idx = perm[k:k + batch]
            current = dataclasses.replace(model, theta=theta)
            loss, grad = batch_grad(current, inputs[idx], targets[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingFailureError(
                    f"epoch {epoch}: loss or gradient left the finite range")
            gnorm = float(np.linalg.norm(grad))
            losses.append(loss)
            gnorms.append(gnorm)
            if clip > 0.0 and gnorm > clip:
                grad = grad * (clip / gnorm)
            theta = adam.step(theta, grad)
        mean_loss = float(np.mean(losses))
        history.append((epoch, mean_loss, float(np.mean(gnorms))))
        if log is not None:
            log(epoch, mean_loss, float(np.mean(gnorms)))
        if mean_loss < best_loss * (1.0 - plateau_rel):
            stall = 0
        else:
            stall += 1
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_epoch = epoch
            best_theta = theta.copy()
        if stall >= patience:
            stop_reason = "plateau"
            break
    return TrainResult(model=dataclasses.replace(model, theta=best_theta),
                       history=history, best_loss=best_loss,
                       best_epoch=best_epoch, stop_reason=stop_reason)


def one_step_error(model: Mlp, dataset: TrainingSet) -> tuple[float, float]:
    """Teacher-forced next-state prediction error, harness-metric normalized.

    Error of each predicted x_ex,i+1 against the reference, divided by the
    per-scenario, per-feature peak magnitude. Evaluated on the same
    switch-free pairs the map is trained on. Returns (mean, max).
    """
    u = np.concatenate([dataset.x_ex_hat[:, :-1], dataset.s_hat[:, :-1]], axis=-1)
    pred = dataset.x_ex_hat[:, :-1] + forward(model, u)
    denom = np.abs(dataset.x_ex_hat).max(axis=1, keepdims=True) + 1e-6
    rel = np.abs(pred - dataset.x_ex_hat[:, 1:]) / denom
    rel = rel.reshape(-1, dataset.dim_ex)[_pair_mask(dataset)]
    return float(rel.mean()), float(rel.max())


def simulate_alternating(
    model: Mlp,
    insys: InternalSystem,
    dataset: TrainingSet,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop rollout of the discrete surrogate against the physics.

    Per step: features from the current hybrid state feed the surrogate's
    tie-current update, while the internal states take one implicit
    trapezoidal step with tie currents frozen at their step-start values.
    Scenarios whose states blow up or lose an implicit solve are frozen and
    reported dead rather than aborting the batch. Returns a hybrid
    trajectory shaped like simulate_closed_loop's and the alive mask.
    """
    check_model_dims(model, dataset)
    grid = dataset.grid
    n = grid.n_steps
    h = grid.h
    b = dataset.n_scenarios
    d_in = dataset.dim_in
    stages = dataset.stage_of_step
    blowup = BLOWUP_FACTOR * max(
        float(np.abs(dataset.x_ex_hat).max()), float(np.abs(dataset.x_in_hat).max()), 1.0)

    x_in = dataset.x_in_hat[:, 0].copy()
    x_ex = dataset.x_ex_hat[:, 0].copy()
    traj = np.empty((b, n + 1, d_in + dataset.dim_ex))
    traj[:, 0] = np.concatenate([x_in, x_ex], axis=-1)
    alive = np.ones(b, dtype=bool)

    for i in range(n):
        stage = stages[..., i] if stages.ndim > 1 else stages[i]
        s = insys.features(x_in, x_ex, stage)
        x_ex_next = x_ex + forward(model, np.concatenate([x_ex, s], axis=-1))

        f0 = insys.rhs(x_in, x_ex, stage)
        base = x_in + 0.5 * h * f0
        x_new = x_in + h * f0
        converged = ~alive
        for _ in range(max_iter):
            trial = base + 0.5 * h * insys.rhs(x_new, x_ex, stage)
            bad = ~np.isfinite(trial).all(axis=-1)
            trial = np.where(bad[:, None], x_new, trial)
            delta = np.max(np.abs(trial - x_new), axis=-1)
            x_new = np.where((converged | bad)[:, None], x_new, trial)
            converged = converged | (delta <= tol)
            alive = alive & ~bad
            if np.all(converged | ~alive):
                break
        alive = alive & converged

        ok = (np.isfinite(x_ex_next).all(axis=-1)
              & (np.abs(x_ex_next).max(axis=-1) < blowup)
              & (np.abs(x_new).max(axis=-1) < blowup))
        alive = alive & ok
        x_in = np.where(alive[:, None], x_new, x_in)
        x_ex = np.where(alive[:, None], x_ex_next, x_ex)
        traj[:, i + 1] = np.concatenate([x_in, x_ex], axis=-1)

    return traj, alive
