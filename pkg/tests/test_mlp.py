import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynequiv.errors import ConfigError, DataError
from dynequiv.mlp import (Mlp, check_jacobians, forward, forward_cached,
                          init_mlp, jacobian_input, jacobian_params,
                          load_model, model_from_dict, model_to_dict,
                          n_params, normalization_from_data, save_model,
                          set_normalization, vjp, vjp_theta_sum)


def make(widths=(3, 8, 2), seed=0, normalized=True):
    rng = np.random.default_rng(seed)
    model = init_mlp(widths, rng)
    if normalized:
        model = set_normalization(
            model,
            in_offset=rng.normal(size=widths[0]),
            in_scale=rng.uniform(0.5, 2.0, widths[0]),
            out_offset=rng.normal(size=widths[-1]),
            out_scale=rng.uniform(0.5, 2.0, widths[-1]),
        )
    return model


def test_param_count():
    assert n_params((3, 8, 2)) == 8 * 3 + 8 + 2 * 8 + 2


def test_forward_batch_consistency(rng):
    model = make()
    x = rng.normal(size=(5, 7, 3))
    y = forward(model, x)
    assert y.shape == (5, 7, 2)
    for i in range(5):
        for j in range(7):
            assert np.allclose(y[i, j], forward(model, x[i, j]))


def test_forward_cached_matches_forward(rng):
    model = make()
    x = rng.normal(size=(4, 3))
    y, cache = forward_cached(model, x)
    assert np.allclose(y, forward(model, x))
    assert cache[0].shape == (4, 3)


def test_jacobians_match_finite_differences(rng):
    worst_in, worst_th = check_jacobians(make(), rng, n_points=20)
    assert worst_in < 1e-8
    assert worst_th < 1e-8


def test_vjp_matches_jacobians(rng):
    model = make()
    x = rng.normal(size=(6, 3))
    w = rng.normal(size=(6, 2))
    _, cache = forward_cached(model, x)
    g_in, g_th = vjp(model, cache, w)
    for k in range(6):
        assert np.allclose(g_in[k], w[k] @ jacobian_input(model, x[k]), atol=1e-12)
        assert np.allclose(g_th[k], w[k] @ jacobian_params(model, x[k]), atol=1e-12)


def test_vjp_theta_sum_collapses_sample_axis(rng):
    model = make()
    x = rng.normal(size=(2, 9, 3))
    w = rng.normal(size=(2, 9, 2))
    _, cache = forward_cached(model, x)
    summed = vjp_theta_sum(model, cache, w)
    _, per_sample = vjp(model, cache, w)
    assert summed.shape == (2, model.theta.size)
    assert np.allclose(summed, per_sample.sum(axis=1), atol=1e-12)


def test_zero_weights_give_constant_output(rng):
    model = make(normalized=False)
    model = set_normalization(model, np.zeros(3), np.ones(3),
                              np.array([1.5, -2.0]), np.array([3.0, 1.0]))
    zeroed = Mlp(widths=model.widths, theta=np.zeros_like(model.theta),
                 in_offset=model.in_offset, in_scale=model.in_scale,
                 out_offset=model.out_offset, out_scale=model.out_scale)
    y = forward(zeroed, rng.normal(size=(10, 3)))
    assert np.allclose(y, [1.5, -2.0])


def test_normalization_from_data_standardizes(rng):
    ins = rng.normal(loc=3.0, scale=2.5, size=(500, 3))
    tgt = rng.normal(loc=-1.0, scale=0.7, size=(500, 2))
    in_off, in_scale, out_off, out_scale = normalization_from_data(ins, tgt)
    z = (ins - in_off) / in_scale
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-12)
    assert np.array_equal(out_off, np.zeros(2))
    assert np.allclose(out_scale, tgt.std(axis=0))
    # constant columns get the floor, not zero
    flat = np.ones((50, 1))
    _, s, _, _ = normalization_from_data(flat, tgt[:50])
    assert s[0] == 1e-6


def test_constructor_validation():
    rng = np.random.default_rng(0)
    model = init_mlp((3, 4, 2), rng)
    with pytest.raises(ConfigError):
        Mlp(widths=(3, 4, 2), theta=np.zeros(5), in_offset=model.in_offset,
            in_scale=model.in_scale, out_offset=model.out_offset,
            out_scale=model.out_scale)
    with pytest.raises(ConfigError):
        set_normalization(model, np.zeros(3), np.zeros(3), np.zeros(2), np.ones(2))
    with pytest.raises(ConfigError):
        Mlp(widths=(3, 2), theta=np.zeros(n_params((3, 2))),
            in_offset=np.zeros(3), in_scale=np.ones(3),
            out_offset=np.zeros(2), out_scale=np.ones(2), activation="relu")


def test_serialization_round_trip(tmp_path, rng):
    model = make(seed=7)
    data = model_to_dict(model)
    clone = model_from_dict(data)
    assert clone.widths == model.widths
    assert np.array_equal(clone.theta, model.theta)
    x = rng.normal(size=(3, 3))
    assert np.array_equal(forward(clone, x), forward(model, x))

    path = tmp_path / "model.json"
    save_model(str(path), model)
    loaded = load_model(str(path))
    assert np.array_equal(forward(loaded, x), forward(model, x))


def test_from_dict_rejects_bad_payload():
    model = make()
    data = model_to_dict(model)
    data["format_version"] = 999
    with pytest.raises(DataError):
        model_from_dict(data)
    data = model_to_dict(model)
    del data["theta"]
    with pytest.raises(DataError):
        model_from_dict(data)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_gradient_of_scalar_loss_property(seed):
    # d/dtheta of 0.5*||f(x)||^2 via vjp equals FD for random widths
    rng = np.random.default_rng(seed)
    widths = (int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 3)))
    model = init_mlp(widths, rng)
    x = rng.normal(size=(5, widths[0]))
    y, cache = forward_cached(model, x)
    _, g = vjp(model, cache, y)
    g = g.sum(axis=0)
    eps = 1e-6
    for k in rng.choice(model.theta.size, size=min(6, model.theta.size), replace=False):
        d = np.zeros(model.theta.size)
        d[k] = eps
        hi = 0.5 * np.sum(forward(model, x, model.theta + d) ** 2)
        lo = 0.5 * np.sum(forward(model, x, model.theta - d) ** 2)
        assert abs(g[k] - (hi - lo) / (2 * eps)) < 1e-5 * max(1.0, abs(g[k]))
