"""Least-squares estimation of the internal-physics Jacobian from data.

Around a pre-fault equilibrium X0 (where the internal vector field
vanishes), states sampled by the trapezoidal rule satisfy

    (2/h) (x_in,i - x_in,i-1)  =  P(X_i) + P(X_i-1)
                               ~  A (X_i + X_i-1 - 2 X0)

with X = [x_ex, x_in] and A the Jacobian of the internal dynamics at X0.
Each row of A is fitted by ridge-regularized least squares over all
scenario/time pairs, restricted to a sparsity mask derived from the
reduced-network electrical connectivity. For data generated by a linear
system and the same integrator the recovery is exact up to solver
tolerance; nonlinear data adds the usual Taylor truncation.

During-fault pairs are excluded by default: the vector field is stage
dependent and the estimate targets the pre/post-fault physics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, StructuralError
from .fileio import read_json, write_json
from .hybrid import TrainingSet
from .physics import InternalSystem

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
RIDGE_FLOOR = 1e-10
CONDITION_WARN = 1e12


@dataclass
class JacobianEstimate:
    """Estimated sensitivity of the internal dynamics, columns [x_ex | x_in]."""

    a: np.ndarray
    mask: np.ndarray
    cond: np.ndarray
    n_samples: int

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.cond = np.asarray(self.cond, dtype=float)
        if self.a.shape != self.mask.shape:
            raise StructuralError("Jacobian estimate and mask shapes differ")
        if self.a.ndim != 2 or self.a.shape[0] > self.a.shape[1]:
            raise StructuralError("Jacobian estimate must be wide: rows are "
                                  "internal states, columns all states")
        if np.any(self.a[~self.mask] != 0.0):
            raise StructuralError("Jacobian estimate has entries outside its mask")
        d_in = self.a.shape[0]
        d_ex = self.a.shape[1] - d_in
        for k in range(d_in):
            if not self.mask[k, d_ex + k]:
                raise StructuralError(f"mask row {k} excludes its self-entry")


def connectivity_mask(insys: InternalSystem, tol: float = 1e-9) -> np.ndarray:
    """Permitted nonzeros from pre-fault reduced-network adjacency.

    Row pairs (angle, speed) of machine k admit both components of every
    tie-line current whose boundary injection reaches machine k and both
    states of every electrically coupled machine, itself included.
    """
    m = insys.n_machines
    t = insys.n_ties
    k_op = insys.k_op[0] if not insys.batched else insys.k_op[0, 0]
    g_op = insys.g_op[0] if not insys.batched else insys.g_op[0, 0]
    mask = np.zeros((2 * m, 2 * t + 2 * m), dtype=bool)
    for k in range(m):
        rows = (2 * k, 2 * k + 1)
        for j in range(t):
            if abs(g_op[k, j]) > tol:
                for r in rows:
                    mask[r, 2 * j] = mask[r, 2 * j + 1] = True
        for l in range(m):
            if l == k or abs(k_op[k, l]) > tol:
                for r in rows:
                    mask[r, 2 * t + 2 * l] = mask[r, 2 * t + 2 * l + 1] = True
    return mask


def pg_estimate_jacobian(
    dataset: TrainingSet,
    mask: np.ndarray | None = None,
    *,
    ridge: float = RIDGE_FLOOR,
    include_fault_stage: bool = False,
) -> JacobianEstimate:
    """Fit A row-wise by normal equations over masked regressor columns.

    The equilibrium reference is the shared pre-fault operating point of
    the dataset; scenarios with differing operating points (mixed load
    scales) cannot be pooled into one regression.
    """
    eq = np.concatenate([dataset.eq_x_ex, dataset.eq_x_in], axis=-1)
    if np.any(eq != eq[:1]):
        raise DataError("scenarios have different operating points; the "
                        "expansion point of the regression is ambiguous")
    x0 = eq[0]
    d_in = dataset.dim_in
    d = x0.size
    if mask is None:
        mask = np.ones((d_in, d), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (d_in, d):
        raise StructuralError(f"mask shape {mask.shape} does not match "
                              f"({d_in}, {d})")

    x_all = np.concatenate([dataset.x_ex_hat, dataset.x_in_hat], axis=-1)
    regress = x_all[:, 1:] + x_all[:, :-1] - 2.0 * x0
    target = (2.0 / dataset.grid.h) * np.diff(dataset.x_in_hat, axis=1)
    stages = np.broadcast_to(dataset.stage_of_step, regress.shape[:2])
    keep = np.ones(regress.shape[:2], dtype=bool) if include_fault_stage \
        else stages != 1
    rows = regress[keep]
    p = target[keep]
    if rows.shape[0] == 0:
        raise DataError("no usable regression samples in the dataset")

    a = np.zeros((d_in, d))
    cond = np.zeros(d_in)
    for k in range(d_in):
        cols = mask[k]
        xk = rows[:, cols]
        gram = xk.T @ xk + ridge * np.eye(int(cols.sum()))
        eig = np.linalg.eigvalsh(gram)
        cond[k] = float(eig[-1] / max(eig[0], np.finfo(float).tiny))
        if cond[k] > CONDITION_WARN:
            log.warning("ill-conditioned regression row %d (cond %.3e)", k, cond[k])
        a[k, cols] = np.linalg.solve(gram, xk.T @ p[:, k])
    est = JacobianEstimate(a=a, mask=mask, cond=cond, n_samples=int(rows.shape[0]))
    return est


def analytic_jacobian(insys: InternalSystem, x_in, x_ex, stage=0) -> np.ndarray:
    """Physics Jacobian in estimate layout (columns [x_ex | x_in])."""
    j_in, j_ex = insys.jacobians(np.asarray(x_in, dtype=float),
                                 np.asarray(x_ex, dtype=float), stage)
    return np.concatenate([j_ex, j_in], axis=-1)


def estimate_to_dict(est: JacobianEstimate) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "a": [[float(v) for v in row] for row in est.a],
        "mask": [[bool(v) for v in row] for row in est.mask],
        "condition_numbers": [float(v) for v in est.cond],
        "n_samples": est.n_samples,
    }


def estimate_from_dict(data: dict) -> JacobianEstimate:
    try:
        if data["format_version"] != FORMAT_VERSION:
            raise DataError(f"unsupported Jacobian file version "
                            f"{data['format_version']}")
        return JacobianEstimate(
            a=np.array(data["a"], dtype=float),
            mask=np.array(data["mask"], dtype=bool),
            cond=np.array(data["condition_numbers"], dtype=float),
            n_samples=int(data["n_samples"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed Jacobian file: {exc}") from exc


def save_estimate(path, est: JacobianEstimate) -> None:
    write_json(path, estimate_to_dict(est))


def load_estimate(path) -> JacobianEstimate:
    return estimate_from_dict(read_json(path))
