"""Jacobian estimation against a linear-system oracle.

Data generated by the same integrator from dz/dt = M (z - z0) satisfies the
regression identity exactly, so recovery of the internal rows of M must hit
solver precision. Everything else (masking, stage exclusion, pooling rules)
is layered on top of that oracle.
"""
import numpy as np
import pytest

from dynequiv.errors import DataError, StructuralError
from dynequiv.estimation import (JacobianEstimate, analytic_jacobian,
                                 connectivity_mask, estimate_from_dict,
                                 estimate_to_dict, load_estimate,
                                 pg_estimate_jacobian, save_estimate)
from dynequiv.grid import FaultScenario
from dynequiv.hybrid import TrainingSet
from dynequiv.integrators import TimeGrid


def linear_dataset(m, z0, grid, rng, n_scen=4, d_in=None, stage_of_step=None,
                   m_fault=None):
    """Trapezoidal rollout of dz/dt = M (z - z0) from random starts.

    The first d_ex coordinates play the external block, the rest the
    internal one. m_fault, when given, drives the steps whose stage is 1.
    """
    d = m.shape[0]
    d_in = d_in if d_in is not None else d // 2
    d_ex = d - d_in
    n = grid.n_steps
    if stage_of_step is None:
        stage_of_step = np.zeros(n, dtype=int)
    eye = np.eye(d)

    def step_matrixes(mat):
        return (np.linalg.inv(eye - 0.5 * grid.h * mat)
                @ (eye + 0.5 * grid.h * mat))

    prop = {0: step_matrixes(m)}
    if m_fault is not None:
        prop[1] = step_matrixes(m_fault)
    z = np.empty((n_scen, n + 1, d))
    z[:, 0] = z0 + 0.1 * rng.normal(size=(n_scen, d))
    for i in range(n):
        mat = prop[int(stage_of_step[i])]
        z[:, i + 1] = z0 + (z[:, i] - z0) @ mat.T
    scen = tuple(FaultScenario(id=i, bus=1, t_fault=0.1, t_clear=0.2)
                 for i in range(n_scen))
    return TrainingSet(
        grid=grid, stage_of_step=stage_of_step,
        x_ex_hat=z[..., :d_ex], x_in_hat=z[..., d_ex:],
        s_hat=np.zeros((n_scen, n + 1, 1)),
        eq_x_ex=np.tile(z0[:d_ex], (n_scen, 1)),
        eq_x_in=np.tile(z0[d_ex:], (n_scen, 1)),
        eq_s=np.zeros((n_scen, 1)), alpha=np.ones(n_scen), scenarios=scen,
        x_ex_scale=np.ones(d_ex), x_in_scale=np.ones(d_in))


def random_stable(d, rng, mask=None):
    m = rng.normal(size=(d, d))
    m = m - (np.abs(m).sum() / d + 1.0) * np.eye(d)
    if mask is not None:
        m[~mask] = 0.0
    return m


def test_linear_recovery_is_exact(rng):
    d = 6
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    ds = linear_dataset(m, z0, TimeGrid(0.0, 0.5, 0.005), rng)
    est = pg_estimate_jacobian(ds)
    want = m[d // 2:]
    assert np.abs(est.a - want).max() < 1e-6
    assert est.n_samples == 4 * 100
    assert est.cond.shape == (d // 2,)


def test_masked_recovery_respects_sparsity(rng):
    d = 6
    d_in = 3
    z0 = rng.normal(size=d)
    mask = rng.random((d_in, d)) < 0.6
    for k in range(d_in):
        mask[k, d - d_in + k] = True
    full_mask = np.ones((d, d), dtype=bool)
    full_mask[d - d_in:] = mask
    m = random_stable(d, rng, mask=full_mask)
    ds = linear_dataset(m, z0, TimeGrid(0.0, 0.5, 0.005), rng)
    est = pg_estimate_jacobian(ds, mask)
    assert np.abs(est.a - m[d - d_in:]).max() < 1e-6
    assert np.all(est.a[~mask] == 0.0)


def test_fault_stage_pairs_are_excluded(rng):
    d = 4
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    m_fault = random_stable(d, rng)
    grid = TimeGrid(0.0, 0.5, 0.005)
    stages = np.zeros(grid.n_steps, dtype=int)
    stages[20:40] = 1
    ds = linear_dataset(m, z0, grid, rng, stage_of_step=stages, m_fault=m_fault)
    est = pg_estimate_jacobian(ds)
    assert np.abs(est.a - m[d // 2:]).max() < 1e-6
    assert est.n_samples == 4 * (grid.n_steps - 20)
    polluted = pg_estimate_jacobian(ds, include_fault_stage=True)
    assert np.abs(polluted.a - m[d // 2:]).max() > 1e-3


def test_mixed_operating_points_rejected(rng):
    d = 4
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    ds = linear_dataset(m, z0, TimeGrid(0.0, 0.2, 0.005), rng)
    ds.eq_x_in[1] += 0.5
    with pytest.raises(DataError):
        pg_estimate_jacobian(ds)


def test_no_usable_samples_rejected(rng):
    d = 4
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    grid = TimeGrid(0.0, 0.2, 0.005)
    stages = np.ones(grid.n_steps, dtype=int)
    ds = linear_dataset(m, z0, grid, rng, stage_of_step=stages, m_fault=m)
    with pytest.raises(DataError):
        pg_estimate_jacobian(ds)


def test_bad_mask_shape_rejected(rng):
    d = 4
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    ds = linear_dataset(m, z0, TimeGrid(0.0, 0.2, 0.005), rng)
    with pytest.raises(StructuralError):
        pg_estimate_jacobian(ds, np.ones((1, d), dtype=bool))


def test_estimate_validation():
    a = np.zeros((2, 4))
    mask = np.ones((2, 4), dtype=bool)
    JacobianEstimate(a=a, mask=mask, cond=np.ones(2), n_samples=10)
    bad = a.copy()
    bad[0, 0] = 1.0
    off = mask.copy()
    off[0, 0] = False
    with pytest.raises(StructuralError):
        JacobianEstimate(a=bad, mask=off, cond=np.ones(2), n_samples=10)
    no_self = mask.copy()
    no_self[0, 2] = False
    with pytest.raises(StructuralError):
        JacobianEstimate(a=a, mask=no_self, cond=np.ones(2), n_samples=10)
    with pytest.raises(StructuralError):
        JacobianEstimate(a=np.zeros((4, 2)), mask=np.ones((4, 2), dtype=bool),
                         cond=np.ones(4), n_samples=10)


def test_connectivity_mask_structure(tm_data):
    _, dataset, insys = tm_data
    mask = connectivity_mask(insys)
    m, t = insys.n_machines, insys.n_ties
    assert mask.shape == (2 * m, 2 * t + 2 * m)
    for k in range(m):
        assert mask[2 * k, 2 * t + 2 * k]
        assert mask[2 * k + 1, 2 * t + 2 * k + 1]
    # angle and speed rows of one machine see the same columns
    for k in range(m):
        assert np.array_equal(mask[2 * k], mask[2 * k + 1])


def test_analytic_jacobian_layout(tm_data):
    _, dataset, insys = tm_data
    a = analytic_jacobian(insys, dataset.x_in_hat[:, 0], dataset.x_ex_hat[:, 0])
    assert a.shape == (1, dataset.dim_in, dataset.dim_ex + dataset.dim_in)
    j_in, j_ex = insys.jacobians(dataset.x_in_hat[:, 0], dataset.x_ex_hat[:, 0], 0)
    assert np.array_equal(a[..., :dataset.dim_ex], j_ex)
    assert np.array_equal(a[..., dataset.dim_ex:], j_in)


def test_estimate_on_real_data_matches_dominant_physics(ieee9_data):
    _, dataset, insys = ieee9_data
    mask = connectivity_mask(insys)
    est = pg_estimate_jacobian(dataset, mask)
    ref = analytic_jacobian(insys, dataset.eq_x_in, dataset.eq_x_ex)[0]
    scale = np.abs(ref).max()
    dominant = np.abs(ref) > 0.1 * scale
    rel = np.abs(est.a - ref) / scale
    assert rel[dominant].max() < 0.1
    assert not np.any(est.a[~est.mask])


def test_serialization_round_trip(tmp_path, rng):
    d = 4
    z0 = rng.normal(size=d)
    m = random_stable(d, rng)
    ds = linear_dataset(m, z0, TimeGrid(0.0, 0.2, 0.005), rng)
    est = pg_estimate_jacobian(ds)
    clone = estimate_from_dict(estimate_to_dict(est))
    assert np.array_equal(clone.a, est.a)
    assert np.array_equal(clone.mask, est.mask)
    assert clone.n_samples == est.n_samples

    path = tmp_path / "jac.json"
    save_estimate(str(path), est)
    loaded = load_estimate(str(path))
    assert np.array_equal(loaded.a, est.a)

    bad = estimate_to_dict(est)
    bad["format_version"] = 99
    with pytest.raises(DataError):
        estimate_from_dict(bad)
