"""Small dense ReLU network in float64 numpy with exact gradients and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream

HIDDEN = (256, 256)
STD_FLOOR = 1e-6


@dataclass
class Mlp:
    """Weights ``W_i`` have shape (fan_out, fan_in); ReLU on all but the last layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match W {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim {W.shape[1]} breaks the shape chain")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @classmethod
    def from_params(cls, params: list[np.ndarray]) -> Mlp:
        return cls(list(params[0::2]), list(params[1::2]))

    def copy(self) -> Mlp:
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)


def init_mlp(sizes, rng: RngStream) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.gen.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def zero_mlp(sizes) -> Mlp:
    return Mlp(
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
    )


def forward(m: Mlp, x) -> np.ndarray:
    """Evaluate on one input of shape (d_in,) or a batch of shape (n, d_in)."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != m.d_in:
        raise ValueError(f"expected input dim {m.d_in}, got {h.shape[-1]}")
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def mse_loss(m: Mlp, X, Y) -> float:
    err = forward(m, X) - Y
    return 0.5 * float(np.sum(err * err)) / len(X)


def grad_mse(m: Mlp, X, Y, return_loss: bool = False):
    """Backprop gradients of ``mean_n 0.5 * ||f(x_n) - y_n||^2``.

    Returns the gradients packed as an :class:`Mlp` of the same shapes, and
    the loss too when ``return_loss`` is set.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty batch")
    if X.shape[1] != m.d_in or Y.shape[1] != m.d_out:
        raise ValueError(f"batch shapes {X.shape}, {Y.shape} do not match net {m.sizes}")
    acts = [X]
    h = X
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    n = len(X)
    delta = (acts[-1] - Y) / n
    gW = [None] * len(m.weights)
    gb = [None] * len(m.weights)
    for i in range(last, -1, -1):
        gW[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ m.weights[i]) * (acts[i] > 0.0)
    grads = Mlp(gW, gb)
    if return_loss:
        err = acts[-1] - Y
        return grads, 0.5 * float(np.sum(err * err)) / n
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(model: Mlp, lr: float = 1e-3, **kw) -> AdamState:
    zeros = [np.zeros_like(p) for p in model.params()]
    return AdamState(zeros, [z.copy() for z in zeros], 0, lr, **kw)


def adam_step(model: Mlp, grads: Mlp, s: AdamState) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update; returns new model and state."""
    t = s.step + 1
    b1, b2 = s.beta1, s.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(model.params(), grads.params(), s.m, s.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps))
        new_m.append(m)
        new_v.append(v)
    return Mlp.from_params(new_p), AdamState(new_m, new_v, t, s.lr, b1, b2, s.eps)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    def __call__(self, x):
        return normalize(self, x)


def fit_normalizer(inputs) -> Normalizer:
    """Per-dimension population mean and std, std floored at 1e-6."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two input vectors to fit a normalizer")
    return Normalizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def normalize(n: Normalizer, x) -> np.ndarray:
    return (np.asarray(x, dtype=float) - n.mean) / n.std


def identity_normalizer(d: int) -> Normalizer:
    return Normalizer(np.zeros(d), np.ones(d))
