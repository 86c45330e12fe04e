"""Minimal feed-forward networks on flat parameter vectors.

Everything learnable in this package is an `Mlp`: a stack of affine layers
with tanh on hidden layers and a linear output, parameterised by one flat
float64 array. Gradients are computed analytically by `mlp_grad` (no
autograd); `Adam` provides the per-parameter moment optimizer used by all
trainers.

Layout of the flat vector: for each layer, the weight matrix (out x in) in
row-major order followed by the bias (out,). This layout is part of the
checkpoint format and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

Array = np.ndarray


def param_count(layer_sizes: tuple[int, ...]) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layer_sizes, layer_sizes[1:]))


@dataclass
class Mlp:
    """Feed-forward net: tanh hidden layers, linear output, flat params."""

    layer_sizes: tuple[int, ...]
    params: Array

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValidationError(f"Mlp needs >= 2 layer sizes, got {self.layer_sizes}")
        if any(n <= 0 for n in self.layer_sizes):
            raise ValidationError(f"Mlp layer sizes must be positive: {self.layer_sizes}")
        expected = param_count(self.layer_sizes)
        if self.params.shape != (expected,):
            raise ValidationError(
                f"param vector has shape {self.params.shape}, expected ({expected},) "
                f"for layers {self.layer_sizes}"
            )

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def weights(self) -> list[tuple[Array, Array]]:
        """Views (W, b) per layer into the flat vector. W is (out, in)."""
        out = []
        off = 0
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = self.params[off : off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            b = self.params[off : off + n_out]
            off += n_out
            out.append((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.params.copy())


def zeros_mlp(layer_sizes: tuple[int, ...]) -> Mlp:
    return Mlp(tuple(layer_sizes), np.zeros(param_count(tuple(layer_sizes))))


def _orthogonal(rows: int, cols: int, rng: np.random.Generator) -> Array:
    """Orthogonal(-ish) matrix with deterministic sign convention."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols]


def init_mlp(
    layer_sizes: tuple[int, ...],
    rng: np.random.Generator,
    hidden_gain: float = 1.0,
    out_gain: float = 1.0,
) -> Mlp:
    """Orthogonal-style init: scaled orthogonal weights, zero biases."""
    net = zeros_mlp(tuple(layer_sizes))
    pairs = net.weights()
    for i, (w, _b) in enumerate(pairs):
        gain = out_gain if i == len(pairs) - 1 else hidden_gain
        w[...] = gain * _orthogonal(w.shape[0], w.shape[1], rng)
    return net


def _check_input(net: Mlp, x: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise ValidationError(
            f"input shape {x.shape} incompatible with Mlp input dim {net.in_dim}"
        )
    return x


def _forward_cached(net: Mlp, x: Array) -> tuple[Array, list[Array]]:
    """Forward pass keeping post-activation values per layer (2-D batch)."""
    acts = [x]
    h = x
    pairs = net.weights()
    for i, (w, b) in enumerate(pairs):
        h = h @ w.T + b
        if i < len(pairs) - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_forward(net: Mlp, x: Array) -> Array:
    """Forward pass. Accepts a single vector or a (batch, in_dim) matrix."""
    x = _check_input(net, x)
    single = x.ndim == 1
    y, _ = _forward_cached(net, x[None, :] if single else x)
    return y[0] if single else y


def mlp_grad(net: Mlp, x: Array, upstream: Array) -> tuple[Array, Array]:
    """Gradient of <upstream, forward(x)> w.r.t. params and input.

    Batched: for 2-D x/upstream the parameter gradient is summed over rows
    and the input gradient is returned per row.
    """
    x = _check_input(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        upstream = upstream[None, :]
    if upstream.shape != (x.shape[0], net.out_dim):
        raise ValidationError(
            f"upstream shape {upstream.shape} incompatible with output dim {net.out_dim}"
        )
    _, acts = _forward_cached(net, x)
    pairs = net.weights()
    grad = np.zeros_like(net.params)
    gviews = Mlp(net.layer_sizes, grad).weights()
    delta = upstream
    for i in range(len(pairs) - 1, -1, -1):
        w, _b = pairs[i]
        gw, gb = gviews[i]
        gw += delta.T @ acts[i]
        gb += delta.sum(axis=0)
        delta = delta @ w
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)  # tanh'(z) = 1 - tanh(z)^2
    dx = delta
    return grad, (dx[0] if single else dx)


def softmax(logits: Array) -> Array:
    """Shift-invariant softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Array) -> Array:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(probs: Array, rng: np.random.Generator) -> tuple[int, float]:
    """Categorical sample via inverse CDF; returns (index, log-prob)."""
    p = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(p) - 1)
    return idx, float(np.log(p[idx]))


@dataclass
class Adam:
    """Per-parameter moment optimizer with bias correction (descends)."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Array | None = field(default=None, repr=False)
    v: Array | None = field(default=None, repr=False)
    t: int = 0

    def step(self, params: Array, grad: Array) -> None:
        """Apply one descent step in place."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
