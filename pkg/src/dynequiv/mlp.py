"""Fully-connected network with hand-written Jacobians and VJPs.

The surrogate ODE right-hand side is a small tanh MLP; training needs
d(output)/d(input) and d(output)/d(parameters) exactly (the adjoint sweep
consumes them thousands of times per epoch), so both are implemented in
closed form on flat parameter vectors rather than through an autodiff
framework.

Parameter layout: for each layer, the weight matrix in row-major order,
then the bias, layers from input to output. Inputs and outputs pass
through per-feature affine normalization whose constants are part of the
model and are serialized with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from . import fileio

FORMAT_VERSION = 1


def param_layout(widths: Sequence[int]) -> list[tuple[slice, slice, tuple[int, int]]]:
    """Per-layer (weight slice, bias slice, weight shape) into the flat vector."""
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"bad layer widths {tuple(widths)}")
    layout = []
    offset = 0
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        w_sl = slice(offset, offset + w_in * w_out)
        offset += w_in * w_out
        b_sl = slice(offset, offset + w_out)
        offset += w_out
        layout.append((w_sl, b_sl, (w_out, w_in)))
    return layout


def n_params(widths: Sequence[int]) -> int:
    return sum(wi * wo + wo for wi, wo in zip(widths[:-1], widths[1:]))


@dataclass
class Mlp:
    widths: tuple[int, ...]
    theta: np.ndarray
    in_offset: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray
    activation: str = "tanh"
    _layout: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        self.widths = tuple(int(w) for w in self.widths)
        if self.theta.shape != (n_params(self.widths),):
            raise ConfigError(
                f"theta has {self.theta.size} entries, layout needs {n_params(self.widths)}")
        if self.in_offset.shape != (self.widths[0],) or self.in_scale.shape != (self.widths[0],):
            raise ConfigError("input normalization does not match the input width")
        if self.out_offset.shape != (self.widths[-1],) or self.out_scale.shape != (self.widths[-1],):
            raise ConfigError("output normalization does not match the output width")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ConfigError("normalization scales must be positive")
        self._layout = param_layout(self.widths)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def layers(self, theta: np.ndarray | None = None):
        th = self.theta if theta is None else theta
        return [(th[w_sl].reshape(shape), th[b_sl]) for w_sl, b_sl, shape in self._layout]


def init_mlp(widths: Sequence[int], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases, identity normalization."""
    widths = tuple(int(w) for w in widths)
    theta = np.zeros(n_params(widths))
    layout = param_layout(widths)
    for w_sl, _, (w_out, w_in) in layout:
        limit = np.sqrt(6.0 / (w_in + w_out))
        theta[w_sl] = rng.uniform(-limit, limit, w_out * w_in)
    return Mlp(
        widths=widths,
        theta=theta,
        in_offset=np.zeros(widths[0]),
        in_scale=np.ones(widths[0]),
        out_offset=np.zeros(widths[-1]),
        out_scale=np.ones(widths[-1]),
    )


def forward(model: Mlp, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
    a = (x - model.in_offset) / model.in_scale
    layers = model.layers(theta)
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
    w, b = layers[-1]
    return model.out_offset + model.out_scale * (a @ w.T + b)


def forward_cached(model: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping the per-layer activations for later VJPs.

    cache[0] is the normalized input; cache[l] the output of hidden layer l.
    """
    a = (x - model.in_offset) / model.in_scale
    cache = [a]
    layers = model.layers()
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
        cache.append(a)
    w, b = layers[-1]
    y = model.out_offset + model.out_scale * (a @ w.T + b)
    return y, cache


def jacobian_input(model: Mlp, x: np.ndarray) -> np.ndarray:
    """d(output)/d(input), shape (..., n_out, n_in)."""
    _, cache = forward_cached(model, x)
    layers = model.layers()
    w_last = layers[-1][0]
    jac = np.broadcast_to(
        model.out_scale[:, None] * w_last, x.shape[:-1] + w_last.shape).copy()
    for (w, _), a in zip(reversed(layers[:-1]), reversed(cache[1:])):
        jac = (jac * (1.0 - a**2)[..., None, :]) @ w
    return jac / model.in_scale


def jacobian_params(model: Mlp, x: np.ndarray) -> np.ndarray:
    """d(output)/d(theta), shape (..., n_out, n_params)."""
    _, cache = forward_cached(model, x)
    layers = model.layers()
    lead = x.shape[:-1]
    out = np.zeros(lead + (model.n_out, model.theta.size))
    upstream = np.broadcast_to(
        np.diag(model.out_scale), lead + (model.n_out, model.n_out)).copy()
    for li in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, shape = model._layout[li]
        a_prev = cache[li]
        blk = upstream[..., :, :, None] * a_prev[..., None, None, :]
        out[..., :, w_sl] = blk.reshape(lead + (model.n_out, shape[0] * shape[1]))
        out[..., :, b_sl] = upstream
        if li > 0:
            w = layers[li][0]
            upstream = (upstream @ w) * (1.0 - cache[li] ** 2)[..., None, :]
    return out


def vjp(model: Mlp, cache: list[np.ndarray], w_out: np.ndarray
        ) -> tuple[np.ndarray, np.ndarray]:
    """w_out^T times the input and parameter Jacobians at a cached point.

    w_out has shape (..., n_out); returns (..., n_in) and (..., n_params).
    """
    layers = model.layers()
    lead = w_out.shape[:-1]
    g_theta = np.zeros(lead + (model.theta.size,))
    g = w_out * model.out_scale
    for li in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, shape = model._layout[li]
        a_prev = cache[li]
        g_theta[..., w_sl] = (g[..., :, None] * a_prev[..., None, :]).reshape(
            lead + (shape[0] * shape[1],))
        g_theta[..., b_sl] = g
        g = g @ layers[li][0]
        if li > 0:
            g = g * (1.0 - cache[li] ** 2)
    return g / model.in_scale, g_theta


def vjp_theta_sum(model: Mlp, cache: list[np.ndarray], w_out: np.ndarray
                  ) -> np.ndarray:
    """Parameter VJP summed over all leading axes except the first.

    Equivalent to vjp(...)[1].sum over intermediate axes, but accumulates
    the per-layer outer products directly, so the (samples x n_params)
    intermediate never materializes. w_out has shape (b, ..., n_out);
    returns (b, n_params).
    """
    layers = model.layers()
    b = w_out.shape[0]
    g_theta = np.zeros((b, model.theta.size))
    g = w_out * model.out_scale
    for li in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, shape = model._layout[li]
        a_prev = cache[li]
        g2 = g.reshape(b, -1, shape[0])
        a2 = a_prev.reshape(b, -1, shape[1])
        gw = np.einsum("bki,bkj->bij", g2, a2)
        g_theta[:, w_sl] = gw.reshape(b, shape[0] * shape[1])
        g_theta[:, b_sl] = g2.sum(axis=1)
        g = g @ layers[li][0]
        if li > 0:
            g = g * (1.0 - cache[li] ** 2)
    return g_theta


def set_normalization(
    model: Mlp,
    in_offset: np.ndarray,
    in_scale: np.ndarray,
    out_offset: np.ndarray,
    out_scale: np.ndarray,
) -> Mlp:
    return replace(
        model,
        in_offset=np.asarray(in_offset, dtype=float),
        in_scale=np.asarray(in_scale, dtype=float),
        out_offset=np.asarray(out_offset, dtype=float),
        out_scale=np.asarray(out_scale, dtype=float),
    )


def normalization_from_data(
    inputs: np.ndarray, targets: np.ndarray, floor: float = 1e-6
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Input mean/std and output scale from data; output offset stays zero.

    A zero-initialized or zero-weight network then predicts exactly zero,
    and scales are floored so constant features cannot produce divisions
    by zero.
    """
    ins = inputs.reshape(-1, inputs.shape[-1])
    tgt = targets.reshape(-1, targets.shape[-1])
    in_offset = ins.mean(axis=0)
    in_scale = np.maximum(ins.std(axis=0), floor)
    out_scale = np.maximum(tgt.std(axis=0), floor)
    return in_offset, in_scale, np.zeros(tgt.shape[-1]), out_scale


def check_jacobians(
    model: Mlp,
    rng: np.random.Generator,
    n_points: int = 100,
    step: float = 1e-6,
) -> tuple[float, float]:
    """Max abs deviation of both analytic Jacobians from central differences."""
    worst_in = 0.0
    worst_th = 0.0
    for _ in range(n_points):
        x = rng.normal(size=model.n_in)
        j_in = jacobian_input(model, x)
        for k in range(model.n_in):
            d = np.zeros(model.n_in)
            d[k] = step
            fd = (forward(model, x + d) - forward(model, x - d)) / (2 * step)
            worst_in = max(worst_in, float(np.max(np.abs(j_in[:, k] - fd))))
        j_th = jacobian_params(model, x)
        cols = rng.choice(model.theta.size, size=min(24, model.theta.size), replace=False)
        for k in cols:
            d = np.zeros(model.theta.size)
            d[k] = step
            fd = (forward(model, x, model.theta + d)
                  - forward(model, x, model.theta - d)) / (2 * step)
            worst_th = max(worst_th, float(np.max(np.abs(j_th[:, k] - fd))))
    return worst_in, worst_th


def model_to_dict(model: Mlp) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "widths": list(model.widths),
        "activation": model.activation,
        "theta": model.theta.tolist(),
        "in_offset": model.in_offset.tolist(),
        "in_scale": model.in_scale.tolist(),
        "out_offset": model.out_offset.tolist(),
        "out_scale": model.out_scale.tolist(),
    }


def model_from_dict(data: dict) -> Mlp:
    try:
        if int(data["format_version"]) != FORMAT_VERSION:
            raise DataError(f"unsupported model format {data['format_version']}")
        widths = tuple(int(w) for w in data["widths"])
        model = Mlp(
            widths=widths,
            theta=np.asarray(data["theta"], dtype=float),
            in_offset=np.asarray(data["in_offset"], dtype=float),
            in_scale=np.asarray(data["in_scale"], dtype=float),
            out_offset=np.asarray(data["out_offset"], dtype=float),
            out_scale=np.asarray(data["out_scale"], dtype=float),
            activation=str(data.get("activation", "tanh")),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise DataError(f"malformed model file: {exc}") from exc
    return model


def save_model(path: str, model: Mlp) -> None:
    fileio.write_json(path, model_to_dict(model))


def load_model(path: str) -> Mlp:
    data = fileio.read_json(path)
    if not isinstance(data, dict):
        raise DataError("model file does not hold an object")
    return model_from_dict(data)
