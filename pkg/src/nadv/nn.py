"""Minimal dense-network engine with analytic gradients.

Everything downstream (WGAN-GP, inverter, MLP classifiers, FGSM) runs on
this module: plain numpy float64 arrays, explicit forward traces, exact
backprop for both parameters and inputs, and a small Adam optimizer.

Array conventions: batches are [b, dim] row-major float64; weights are
[out, in]; gradients returned by backward() are sums over the batch of
d<out_grad, output>/d(param).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, DimensionError, DivergenceError

ACTIVATIONS = ("relu", "tanh", "leaky_relu", "identity")
LEAKY_SLOPE = 0.2


def activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "leaky_relu":
        return np.where(a > 0.0, a, LEAKY_SLOPE * a)
    if kind == "identity":
        return a
    raise DimensionError(f"unknown activation kind {kind!r}")


def activate_grad(kind: str, a: np.ndarray) -> np.ndarray:
    """First derivative of the activation, evaluated at pre-activation a."""
    if kind == "relu":
        return np.where(a > 0.0, 1.0, 0.0)
    if kind == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if kind == "leaky_relu":
        return np.where(a > 0.0, 1.0, LEAKY_SLOPE)
    if kind == "identity":
        return np.ones_like(a)
    raise DimensionError(f"unknown activation kind {kind!r}")


def activate_curv(kind: str, a: np.ndarray) -> np.ndarray:
    """Second derivative; zero a.e. for the piecewise-linear kinds."""
    if kind == "tanh":
        t = np.tanh(a)
        return -2.0 * t * (1.0 - t * t)
    if kind in ("relu", "leaky_relu", "identity"):
        return np.zeros_like(a)
    raise DimensionError(f"unknown activation kind {kind!r}")


@dataclass
class Layer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray    # [out]
    activation: str

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNet:
    """Feedforward stack of dense layers.

    ``version`` counts parameter mutations so stale forward traces can be
    rejected by backward().
    """

    layers: list[Layer]
    version: int = 0

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            prev, cur = self.layers[i - 1], self.layers[i]
            if cur.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer {i} expects input dim {cur.in_dim} but layer "
                    f"{i - 1} produces {prev.out_dim}"
                )
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise DimensionError(
                    f"layer {i} has unknown activation {layer.activation!r}"
                )
            if layer.bias.shape != (layer.out_dim,):
                raise DimensionError(
                    f"layer {i} bias shape {layer.bias.shape} does not match "
                    f"output dim {layer.out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def param_count(self) -> int:
        return sum(l.out_dim * (l.in_dim + 1) for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation)
             for l in self.layers]
        )


def init_net(dims: Sequence[int], hidden_activation: str = "relu",
             output_activation: str = "identity",
             rng: np.random.Generator | None = None) -> DenseNet:
    """Glorot-uniform weights, zero biases.

    dims = [in, h1, ..., out]; hidden layers use hidden_activation, the last
    layer uses output_activation.
    """
    if len(dims) < 2:
        raise DimensionError("need at least input and output dims")
    rng = rng or np.random.default_rng(0)
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(Layer(w, b, act))
    return DenseNet(layers)


def identity_net(dim: int) -> DenseNet:
    """A net computing f(x) = x; handy as an oracle generator/inverter."""
    return DenseNet([Layer(np.eye(dim), np.zeros(dim), "identity")])


@dataclass
class ForwardTrace:
    """All intermediate values of one forward() call.

    pre[i]/post[i] are the pre- and post-activation values of layer i;
    ``output`` is post[-1].
    """

    net: DenseNet
    net_version: int
    batch: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def forward(net: DenseNet, batch: np.ndarray) -> ForwardTrace:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise DimensionError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != net.input_dim:
        raise DimensionError(
            f"batch dim {batch.shape[1]} does not match layer 0 input dim "
            f"{net.input_dim}"
        )
    if batch.shape[0] < 1:
        raise DimensionError("batch must contain at least one row")
    pre, post = [], []
    h = batch
    for layer in net.layers:
        a = h @ layer.weight.T + layer.bias
        h = activate(layer.activation, a)
        pre.append(a)
        post.append(h)
    return ForwardTrace(net, net.version, batch, pre, post)


def backward(net: DenseNet, trace: ForwardTrace,
             out_grad: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Backprop out_grad through the trace.

    Returns ([(dW, db) per layer], d/d(batch)); gradients are sums over the
    batch of d<out_grad, output>.
    """
    if trace.net is not net or trace.net_version != net.version:
        raise ConsistencyError(
            "forward trace is stale or belongs to a different net"
        )
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != trace.output.shape:
        raise DimensionError(
            f"out_grad shape {out_grad.shape} does not match output shape "
            f"{trace.output.shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    delta = out_grad
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * activate_grad(layer.activation, trace.pre[i])
        h_prev = trace.batch if i == 0 else trace.post[i - 1]
        grads[i] = (delta.T @ h_prev, delta.sum(axis=0))
        delta = delta @ layer.weight
    return grads, delta


def input_gradient(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    """d(sum of scalar outputs)/d(input) for a net with output_dim == 1."""
    if net.output_dim != 1:
        raise DimensionError("input_gradient expects a scalar-output net")
    trace = forward(net, batch)
    _, g = backward(net, trace, np.ones_like(trace.output))
    return g


@dataclass
class AdamState:
    """Per-net Adam moment buffers; shapes mirror the net's parameters."""

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    v: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-4, beta1: float = 0.5,
                beta2: float = 0.9, eps: float = 1e-8) -> "AdamState":
        if lr <= 0:
            raise DivergenceError(f"learning rate must be positive, got {lr}")
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for layer in net.layers:
            state.m.append((np.zeros_like(layer.weight), np.zeros_like(layer.bias)))
            state.v.append((np.zeros_like(layer.weight), np.zeros_like(layer.bias)))
        return state


def adam_step(net: DenseNet, grads: list[tuple[np.ndarray, np.ndarray]],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Mutates net and state."""
    if len(grads) != len(net.layers):
        raise DimensionError(
            f"got {len(grads)} gradient pairs for {len(net.layers)} layers"
        )
    for dw, db in grads:
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise DivergenceError("non-finite gradients passed to adam_step")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for i, layer in enumerate(net.layers):
        for param, grad, m, v in (
            (layer.weight, grads[i][0], state.m[i][0], state.v[i][0]),
            (layer.bias, grads[i][1], state.m[i][1], state.v[i][1]),
        ):
            if grad.shape != param.shape:
                raise DimensionError(
                    f"gradient shape {grad.shape} does not match parameter "
                    f"shape {param.shape} in layer {i}"
                )
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            m_hat = m / b1t
            v_hat = v / b2t
            param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    net.version += 1


def grad_check(net: DenseNet, batch: np.ndarray, h: float = 1e-5,
               out_grad: np.ndarray | None = None) -> float:
    """Max relative error of analytic parameter gradients vs central
    finite differences of the scalar loss <out_grad, forward(batch)>.
    """
    if h <= 0:
        raise DimensionError(f"step h must be positive, got {h}")
    trace = forward(net, batch)
    if out_grad is None:
        out_grad = np.ones_like(trace.output)
    analytic, _ = backward(net, trace, out_grad)

    def loss() -> float:
        return float(np.sum(forward(net, batch).output * out_grad))

    worst = 0.0
    for i, layer in enumerate(net.layers):
        for param, grad in ((layer.weight, analytic[i][0]),
                            (layer.bias, analytic[i][1])):
            flat = param.reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = loss()
                flat[j] = orig - h
                down = loss()
                flat[j] = orig
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(gflat[j]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst
