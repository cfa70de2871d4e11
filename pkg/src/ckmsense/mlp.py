"""Minimal fully-connected network in numpy.

Hidden layers use a leaky rectifier, the output head is linear. Besides the
usual forward/backward passes this module provides the exact Jacobian of the
outputs with respect to the network *input*, computed in forward mode; with a
2-D input that costs about two extra forward passes and is what the
localization gradient chains through.

Everything is float64 and free of hidden global state, so training runs are
bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MlpParams:
    """Layer weights/biases; ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    negative_slope: float = 0.01

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        for w_prev, w_next in zip(self.weights, self.weights[1:]):
            if w_prev.shape[1] != w_next.shape[0]:
                raise ValueError("layer dimension chain broken")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(weights=[w.copy() for w in self.weights],
                         biases=[b.copy() for b in self.biases],
                         negative_slope=self.negative_slope)

    def all_finite(self) -> bool:
        return (all(np.all(np.isfinite(w)) for w in self.weights)
                and all(np.all(np.isfinite(b)) for b in self.biases))


def init_mlp(layer_dims, rng: np.random.Generator,
             negative_slope: float = 0.01,
             output_scale: float = 0.01) -> MlpParams:
    """He-style initialization; the output head starts near zero so raw
    predictions begin small."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        std = output_scale / np.sqrt(fan_in) if last else np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, negative_slope=negative_slope)


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def _leaky_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, 1.0, slope)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; ``x`` is (n, d_in), result is (n, d_out)."""
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == params.n_layers - 1 else _leaky(z, params.negative_slope)
    return h


def mlp_forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    activations = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == params.n_layers - 1 else _leaky(z, params.negative_slope)
        activations.append(h)
    return h, (activations, pre)


def mlp_backward(params: MlpParams, cache, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. all weights and biases.

    ``grad_out`` is dLoss/d(output), shape (n, d_out). Returns
    ``(grads_w, grads_b)`` matching ``params`` layer for layer.
    """
    activations, pre = cache
    grads_w = [None] * params.n_layers
    grads_b = [None] * params.n_layers
    g = grad_out
    for i in range(params.n_layers - 1, -1, -1):
        if i != params.n_layers - 1:
            g = g * _leaky_grad(pre[i], params.negative_slope)
        grads_w[i] = activations[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return grads_w, grads_b


def mlp_input_jacobian(params: MlpParams, x: np.ndarray):
    """Outputs and d(output)/d(input) for a batch.

    Returns ``(out, jac)`` with ``out`` of shape (n, d_out) and ``jac`` of
    shape (n, d_out, d_in). Forward-mode: one tangent per input coordinate.
    """
    x = np.asarray(x, dtype=float)
    n, d_in = x.shape
    h = x
    # tangent[:, j, :] = d h / d x_j
    tangent = np.broadcast_to(np.eye(d_in), (n, d_in, d_in)).copy()
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        tz = tangent @ w
        if i == params.n_layers - 1:
            h, tangent = z, tz
        else:
            h = _leaky(z, params.negative_slope)
            tangent = tz * _leaky_grad(z, params.negative_slope)[:, None, :]
    return h, tangent.transpose(0, 2, 1)


@dataclass
class AdamState:
    """First/second moment accumulators for Adam."""

    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        return cls(m_w=[np.zeros_like(w) for w in params.weights],
                   v_w=[np.zeros_like(w) for w in params.weights],
                   m_b=[np.zeros_like(b) for b in params.biases],
                   v_b=[np.zeros_like(b) for b in params.biases])


def adam_step(params: MlpParams, grads_w, grads_b, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update."""
    state.t += 1
    corr1 = 1.0 - beta1 ** state.t
    corr2 = 1.0 - beta2 ** state.t
    for i in range(params.n_layers):
        for p, g, m, v in ((params.weights[i], grads_w[i], state.m_w[i], state.v_w[i]),
                           (params.biases[i], grads_b[i], state.m_b[i], state.v_b[i])):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
