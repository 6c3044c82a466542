"""Dense layers with hand-written backward passes.

Matrices are float64 numpy arrays laid out row-per-sample. A layer computes
``act(x @ weight + bias)`` with ``weight`` of shape ``(in, out)`` and
``bias`` of shape ``(1, out)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from frida.errors import NumericError, ShapeError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")


def as_matrix(x, name="x") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _act(kind, pre):
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "leaky_relu":
        return np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    if kind == "tanh":
        return np.tanh(pre)
    return pre


def _act_grad(kind, pre, out, dout):
    if kind == "relu":
        return dout * (pre > 0)
    if kind == "leaky_relu":
        return dout * np.where(pre > 0, 1.0, LEAKY_SLOPE)
    if kind == "tanh":
        return dout * (1.0 - out * out)
    return dout


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "weight")
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(1, -1)
        if self.bias.shape[1] != self.weight.shape[1]:
            raise ShapeError(
                f"bias width {self.bias.shape[1]} != weight width {self.weight.shape[1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, n_in, n_out, activation, rng) -> Dense:
        # fan-in scaled uniform, unit-variance preserving for linear maps
        bound = np.sqrt(3.0 / n_in)
        w = (2.0 * rng.uniform((n_in, n_out)) - 1.0) * bound
        return cls(w, np.zeros((1, n_out)), activation)

    @classmethod
    def zeros(cls, n_in, n_out, activation="identity") -> Dense:
        return cls(np.zeros((n_in, n_out)), np.zeros((1, n_out)), activation)

    def copy(self) -> Dense:
        return Dense(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class DenseNet:
    layers: list[Dense] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("DenseNet needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer {i} outputs {a.n_out} but layer {i + 1} takes {b.n_in}")

    @classmethod
    def init(cls, widths, activations, rng) -> DenseNet:
        """``widths`` lists input width then each layer's output width."""
        if len(activations) != len(widths) - 1:
            raise ShapeError("need one activation per layer")
        return cls([Dense.init(i, o, a, rng)
                    for i, o, a in zip(widths, widths[1:], activations)])

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> DenseNet:
        return DenseNet([layer.copy() for layer in self.layers])

    def forward(self, x) -> np.ndarray:
        return forward(self, x)


def forward(net: DenseNet, x) -> np.ndarray:
    """Output of the last layer of ``net`` applied to the rows of ``x``."""
    out, _ = forward_cached(net, x)
    return out


def forward_cached(net: DenseNet, x):
    h = as_matrix(x)
    if h.shape[1] != net.n_in:
        raise ShapeError(f"input has {h.shape[1]} columns, network expects {net.n_in}")
    cache = []
    for layer in net.layers:
        pre = h @ layer.weight + layer.bias
        out = _act(layer.activation, pre)
        cache.append((h, pre, out))
        h = out
    return h, cache


def backward(net: DenseNet, cache, dout, need_input_grad=False):
    """Gradients of a scalar loss given ``dout = dloss/doutput``.

    Returns ``(grads, dx)`` with ``grads`` ordered like ``net.params()``;
    ``dx`` is None unless requested.
    """
    grads = [None] * (2 * len(net.layers))
    g = dout
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, pre, out = cache[i]
        g = _act_grad(layer.activation, pre, out, g)
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0, keepdims=True)
        if i > 0 or need_input_grad:
            g = g @ layer.weight.T
    return grads, (g if need_input_grad else None)


def dense_forward(layer: Dense, x) -> np.ndarray:
    return _act(layer.activation, x @ layer.weight + layer.bias)


def dense_backward(layer: Dense, x, dout):
    """Gradients for a single identity-activation head."""
    if layer.activation != "identity":
        raise ValueError("dense_backward handles identity heads only")
    return [x.T @ dout, dout.sum(axis=0, keepdims=True)], dout @ layer.weight.T


def check_finite(value, what="value"):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite {what}")
    return value
