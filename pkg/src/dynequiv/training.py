"""Gradient-descent training of the tie-current surrogate.

All modes run full-batch Adam on the adjoint gradient, stop on a loss
plateau or an epoch cap, and return the best parameters seen. A scenario
that diverges under the current parameters is masked out of that epoch's
loss and gradient instead of aborting the run; training only fails when
every scenario is gone or the loss itself leaves the finite range.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, TrainingFailureError
from .hybrid import (TrainingSet, adjoint_gradient, check_model_dims,
                     open_loop_gradient, simulate_closed_loop, simulate_open_loop)
from .mlp import Mlp, init_mlp, set_normalization
from .physics import InternalSystem

DEFAULT_LR = 1e-3
DEFAULT_EPOCHS = 500
DEFAULT_CLIP = 10.0
PLATEAU_REL = 1e-5
PLATEAU_PATIENCE = 20


@dataclass
class TrainResult:
    model: Mlp
    history: list[tuple[int, float, float]]    # (epoch, loss, grad_norm)
    best_loss: float
    best_epoch: int
    stop_reason: str

    @property
    def n_epochs(self) -> int:
        return len(self.history)


@dataclass
class _Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]
    t: int = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def prepare_model(hidden, dataset: TrainingSet, rng: np.random.Generator) -> Mlp:
    """Fresh surrogate sized for the dataset, with data-driven normalization.

    Input normalization comes from the statistics of the reference
    (tie-current, feature) samples; the output scale from finite-difference
    derivative magnitudes. The output offset stays zero so that
    zero-weight parameters yield a frozen external state rather than a
    drifting one.
    """
    model = init_mlp(dataset.model_widths(tuple(hidden)), rng)
    u = np.concatenate([dataset.x_ex_hat, dataset.s_hat], axis=-1)
    flat = u.reshape(-1, u.shape[-1])
    in_offset = flat.mean(axis=0)
    in_scale = np.maximum(flat.std(axis=0), 1e-6)
    dx = np.diff(dataset.x_ex_hat, axis=1) / dataset.grid.h
    out_scale = np.maximum(dx.reshape(-1, dx.shape[-1]).std(axis=0), 1e-6)
    return set_normalization(model, in_offset=in_offset, in_scale=in_scale,
                             out_offset=np.zeros(dataset.dim_ex), out_scale=out_scale)


def deviation_scales(x_hat: np.ndarray, x_eq: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Per-feature loss scale: std of the deviation from equilibrium."""
    dev = x_hat - x_eq[:, None, :]
    return np.maximum(dev.reshape(-1, dev.shape[-1]).std(axis=0), floor)


def _descend(
    model: Mlp,
    grad_fn: Callable[[Mlp], tuple[float, np.ndarray]],
    *,
    epochs: int,
    lr: float,
    clip: float,
    plateau_rel: float,
    patience: int,
    log: Callable[[int, float, float], None] | None,
) -> TrainResult:
    adam = _Adam(lr=lr)
    theta = model.theta.copy()
    best_theta = theta.copy()
    best_loss = np.inf
    best_epoch = -1
    stall = 0
    history: list[tuple[int, float, float]] = []
    stop_reason = "max_epochs"
    for epoch in range(epochs):
        current = dataclasses.replace(model, theta=theta)
        try:
            loss, grad = grad_fn(current)
        except DivergenceError as exc:
            raise TrainingFailureError(
                f"epoch {epoch}: {exc}") from exc
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingFailureError(
                f"epoch {epoch}: loss or gradient left the finite range")
        gnorm = float(np.linalg.norm(grad))
        history.append((epoch, loss, gnorm))
        if log is not None:
            log(epoch, loss, gnorm)
        if loss < best_loss * (1.0 - plateau_rel):
            stall = 0
        else:
            stall += 1
        if loss < best_loss:
            best_loss = loss
            best_epoch = epoch
            best_theta = theta.copy()
        if stall >= patience:
            stop_reason = "plateau"
            break
        if clip > 0.0 and gnorm > clip:
            grad = grad * (clip / gnorm)
        theta = adam.step(theta, grad)
    if not np.isfinite(best_loss):
        raise TrainingFailureError("no finite loss was ever reached")
    return TrainResult(model=dataclasses.replace(model, theta=best_theta),
                       history=history, best_loss=best_loss,
                       best_epoch=best_epoch, stop_reason=stop_reason)


def train_pi(
    model: Mlp,
    insys: InternalSystem,
    dataset: TrainingSet,
    *,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    clip: float = DEFAULT_CLIP,
    plateau_rel: float = PLATEAU_REL,
    patience: int = PLATEAU_PATIENCE,
    phys_jac: np.ndarray | None = None,
    log: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Closed-loop training against the retained physics.

    With phys_jac set, the backward sweep swaps the internal-physics
    Jacobian blocks for that constant estimate while the forward pass is
    unchanged.
    """
    check_model_dims(model, dataset)

    def grad_fn(m: Mlp) -> tuple[float, np.ndarray]:
        traj, alive = simulate_closed_loop(
            m, insys, dataset.z0(), dataset.grid, dataset.stage_of_step,
            mask_failures=True)
        loss, grad, _ = adjoint_gradient(m, insys, traj, dataset,
                                         phys_jac=phys_jac, alive=alive)
        return loss, grad

    return _descend(model, grad_fn, epochs=epochs, lr=lr, clip=clip,
                    plateau_rel=plateau_rel, patience=patience, log=log)


def train_pg(
    model: Mlp,
    insys: InternalSystem,
    dataset: TrainingSet,
    phys_jac: np.ndarray,
    **kwargs,
) -> TrainResult:
    """Closed-loop training with an estimated internal Jacobian in the adjoint."""
    if phys_jac is None:
        raise TrainingFailureError("estimated-Jacobian training needs a Jacobian")
    return train_pi(model, insys, dataset, phys_jac=np.asarray(phys_jac, dtype=float),
                    **kwargs)


def train_open_loop(
    model: Mlp,
    dataset: TrainingSet,
    *,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    clip: float = DEFAULT_CLIP,
    plateau_rel: float = PLATEAU_REL,
    patience: int = PLATEAU_PATIENCE,
    log: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Fit the tie-current block alone against replayed measured features."""
    check_model_dims(model, dataset)

    def grad_fn(m: Mlp) -> tuple[float, np.ndarray]:
        traj_ex, alive = simulate_open_loop(m, dataset, mask_failures=True)
        loss, grad, _ = open_loop_gradient(m, traj_ex, dataset, alive=alive)
        return loss, grad

    return _descend(model, grad_fn, epochs=epochs, lr=lr, clip=clip,
                    plateau_rel=plateau_rel, patience=patience, log=log)
