import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynequiv.errors import ConfigError, DivergenceError, NonconvergenceError
from dynequiv.integrators import (TimeGrid, integrate, integrate_adjoint_segment,
                                  integrate_stages, trapezoidal_step)


def test_grid_validation():
    with pytest.raises(ConfigError):
        TimeGrid(0.0, 1.0, -0.1)
    with pytest.raises(ConfigError):
        TimeGrid(1.0, 0.0, 0.1)
    with pytest.raises(ConfigError):
        TimeGrid(0.0, 1.0, 0.3)
    g = TimeGrid(0.0, 1.0, 0.25)
    assert g.n_steps == 4
    assert np.allclose(g.times(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.nearest_index(0.26) == 1
    assert g.snap(0.74) == 0.75
    with pytest.raises(ConfigError):
        g.nearest_index(2.0)


def test_trapezoidal_exact_on_linear_rhs():
    # x' = a t + b integrates exactly under the trapezoidal rule
    a, b = 0.7, -0.3
    x = trapezoidal_step(lambda x, t: np.array([a * t + b]),
                         np.array([1.0]), 0.2, 0.1)
    exact = 1.0 + a / 2 * (0.3 ** 2 - 0.2 ** 2) + b * 0.1
    assert abs(x[0] - exact) < 1e-12


def test_trapezoidal_second_order_on_oscillator():
    # harmonic oscillator, exact solution cos(w t); order slope from halving
    # h, measured away from solution extrema where phase error dominates
    w = 2.0 * np.pi

    def f(x, t):
        return np.array([x[1], -w * w * x[0]])

    errs = []
    for h in (0.007, 0.0035, 0.00175):
        grid = TimeGrid(0.0, 0.7, h)
        traj = integrate(f, np.array([1.0, 0.0]), grid)
        errs.append(abs(traj[-1, 0] - np.cos(w * 0.7)))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes > 1.9) and np.all(slopes < 2.1)


def test_trapezoidal_step_failure_modes():
    with pytest.raises(DivergenceError):
        trapezoidal_step(lambda x, t: x * np.inf, np.array([1.0]), 0.0, 0.1)
    # no-convergence: stiff contraction factor above 1
    with pytest.raises(NonconvergenceError):
        trapezoidal_step(lambda x, t: -1e4 * x, np.array([1.0]), 0.0, 0.1,
                         max_iter=5)


def test_integrate_with_events_switches_rhs():
    grid = TimeGrid(0.0, 1.0, 0.01)
    fs = [lambda x, t: np.array([1.0]), lambda x, t: np.array([-1.0])]
    traj = integrate(fs, np.array([0.0]), grid, events=[0.5])
    assert abs(traj[50, 0] - 0.5) < 1e-12
    assert abs(traj[-1, 0]) < 1e-12


def test_integrate_stages_matches_scalar_path():
    # batched stage integration reproduces the single-trajectory integrator
    grid = TimeGrid(0.0, 1.0, 0.02)
    a_by_stage = np.array([[-0.5, 0.3], [-2.0, 0.0], [-0.5, 0.3]])

    def rhs(x, t, stage):
        a = a_by_stage[stage]
        return a[..., :1] * x + a[..., 1:]

    stages = np.zeros(grid.n_steps, dtype=int)
    stages[20:30] = 1
    stages[30:] = 2
    x0 = np.array([[1.0], [2.0]])
    traj, alive = integrate_stages(rhs, x0, grid, np.stack([stages, stages]))
    assert np.all(alive)

    for k, x_init in enumerate(x0):
        xs = [x_init]
        for i in range(grid.n_steps):
            xs.append(trapezoidal_step(
                lambda x, t, s=stages[i]: a_by_stage[s, 0] * x + a_by_stage[s, 1],
                xs[-1], grid.times()[i], grid.h))
        assert np.max(np.abs(traj[k] - np.array(xs))) < 1e-9


def test_integrate_stages_masks_dead_rows():
    grid = TimeGrid(0.0, 1.0, 0.1)

    def rhs(x, t, stage):
        out = x.copy()
        out[..., 0] = np.where(x[..., 0] > 5.0, np.inf, x[..., 0] * 8.0)
        return out

    x0 = np.array([[1.0], [1e-4]])
    traj, alive = integrate_stages(rhs, x0, grid,
                                   np.zeros(grid.n_steps, dtype=int),
                                   mask_failures=True)
    assert list(alive) == [False, True]
    assert np.all(np.isfinite(traj))
    # dead row frozen at its last finite state
    dead = traj[0]
    j = np.argmax(dead[1:, 0] == dead[:-1, 0])
    assert np.all(dead[j:, 0] == dead[j, 0])
    with pytest.raises(DivergenceError):
        integrate_stages(rhs, x0, grid, np.zeros(grid.n_steps, dtype=int))


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=-2.0, max_value=2.0),
       st.floats(min_value=0.1, max_value=1.0))
def test_adjoint_segment_constant_rhs_quadrature(c, span):
    # constant forward rhs c integrated backward over `span` changes by -span*c
    h = span / 10
    out = integrate_adjoint_segment(lambda x, t: np.array([c]),
                                    np.array([1.0]), span, 0.0, h)
    assert abs(out[0] - (1.0 - span * c)) < 1e-9


def test_adjoint_segment_validation():
    with pytest.raises(ConfigError):
        integrate_adjoint_segment(lambda x, t: x, np.array([1.0]), 0.0, 1.0, 0.1)
    with pytest.raises(ConfigError):
        integrate_adjoint_segment(lambda x, t: x, np.array([1.0]), 1.0, 0.0, -0.1)
    with pytest.raises(ConfigError):
        integrate_adjoint_segment(lambda x, t: x, np.array([1.0]), 1.0, 0.0, 0.3)
