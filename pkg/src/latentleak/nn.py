"""Minimal dense neural-network engine.

Sequential stacks of dense layers with ReLU or identity activations, softmax
cross-entropy and MSE losses, exact backpropagation and SGD/Adam updates.
Everything is float64; models are immutable and optimiser steps return new
models.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rng import SeededRng

ACTIVATIONS = ("relu", "identity")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """``activation(x @ weight.T + bias)`` with weight of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = _frozen(self.weight)
        b = _frozen(self.bias)
        if w.ndim != 2:
            raise ValueError(f"weight must be 2-D (out, in), got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class Sequential:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a model needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_features != b.in_features:
                raise ValueError(
                    f"layer {i} outputs {a.out_features} features but layer {i + 1} "
                    f"expects {b.in_features}"
                )
        object.__setattr__(self, "layers", layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Sequential(self.layers[idx])
        return self.layers[idx]

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def shapes(self) -> list[tuple[tuple[int, int], str]]:
        """Architecture signature: ((out, in), activation) per layer."""
        return [(l.weight.shape, l.activation) for l in self.layers]

    def replace(self, index: int, layer: DenseLayer) -> "Sequential":
        layers = list(self.layers)
        layers[index] = layer
        return Sequential(tuple(layers))

    def __add__(self, other: "Sequential") -> "Sequential":
        return Sequential(self.layers + other.layers)


def init_dense(n_in: int, n_out: int, activation: str, rng: SeededRng) -> DenseLayer:
    """He-normal weights for ReLU layers, Glorot-normal otherwise; zero bias."""
    gen = rng.generator()
    scale = np.sqrt(2.0 / n_in) if activation == "relu" else np.sqrt(2.0 / (n_in + n_out))
    return DenseLayer(gen.normal(0.0, scale, size=(n_out, n_in)), np.zeros(n_out), activation)


def build_mlp(widths: Sequence[int], activations: Sequence[str], rng: SeededRng) -> Sequential:
    if len(activations) != len(widths) - 1:
        raise ValueError("need one activation per layer")
    return Sequential(tuple(
        init_dense(widths[i], widths[i + 1], activations[i], rng.child(i))
        for i in range(len(widths) - 1)
    ))


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Per-layer inputs and pre-activations recorded by :func:`forward`."""

    model: Sequential
    inputs: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]


def _as_batch(batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"batch must be 2-D (samples, features), got shape {x.shape}")
    return x


def forward(model: Sequential, batch) -> tuple[ForwardCache, np.ndarray]:
    x = _as_batch(batch)
    if x.shape[1] != model.in_features:
        raise ValueError(
            f"batch has {x.shape[1]} columns but the first layer expects {model.in_features}"
        )
    inputs, pre = [], []
    for layer in model.layers:
        inputs.append(x)
        r = x @ layer.weight.T + layer.bias
        pre.append(r)
        x = np.maximum(r, 0.0) if layer.activation == "relu" else r
    return ForwardCache(model, tuple(inputs), tuple(pre)), x


def predict(model: Sequential, batch) -> np.ndarray:
    return forward(model, batch)[1]


class GradientSet:
    """Per-layer (weight, bias) gradients, shape-congruent with a model."""

    __slots__ = ("weights", "biases")

    def __init__(self, weights: Iterable[np.ndarray], biases: Iterable[np.ndarray]):
        self.weights = tuple(np.asarray(w, dtype=np.float64) for w in weights)
        self.biases = tuple(np.asarray(b, dtype=np.float64) for b in biases)
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have one entry per layer")

    @classmethod
    def zeros_like(cls, model: Sequential) -> "GradientSet":
        return cls([np.zeros_like(l.weight) for l in model.layers],
                   [np.zeros_like(l.bias) for l in model.layers])

    @classmethod
    def zeros_congruent(cls, other: "GradientSet") -> "GradientSet":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    @classmethod
    def from_model(cls, model: Sequential) -> "GradientSet":
        """Parameters of ``model`` packed as a GradientSet (parameter-delta payloads)."""
        return cls([l.weight.copy() for l in model.layers], [l.bias.copy() for l in model.layers])

    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]

    def congruent(self, other) -> bool:
        if isinstance(other, Sequential):
            return self.shapes() == [(l.weight.shape, l.bias.shape) for l in other.layers]
        return self.shapes() == other.shapes()

    def _check(self, other: "GradientSet"):
        if not self.congruent(other):
            raise ValueError(f"gradient shapes differ: {self.shapes()} vs {other.shapes()}")

    def __add__(self, other: "GradientSet") -> "GradientSet":
        self._check(other)
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])

    def __sub__(self, other: "GradientSet") -> "GradientSet":
        self._check(other)
        return GradientSet([a - b for a, b in zip(self.weights, other.weights)],
                           [a - b for a, b in zip(self.biases, other.biases)])

    def __mul__(self, c: float) -> "GradientSet":
        c = float(c)
        return GradientSet([w * c for w in self.weights], [b * c for b in self.biases])

    __rmul__ = __mul__

    def __neg__(self) -> "GradientSet":
        return self * -1.0

    def arrays(self) -> list[np.ndarray]:
        """Flat list [w0, b0, w1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def restrict(self, layers: Sequence[int]) -> "GradientSet":
        return GradientSet([self.weights[i] for i in layers], [self.biases[i] for i in layers])

    def equal(self, other: "GradientSet") -> bool:
        """Bitwise equality."""
        return self.congruent(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def __repr__(self):
        return f"GradientSet({self.shapes()})"


def _deltas(model: Sequential, cache: ForwardCache, loss_grad) -> list[np.ndarray]:
    if cache is None or cache.model is not model:
        raise ValueError("activations are stale or missing: run forward() on this model first")
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    expected = cache.pre[-1].shape
    if g.shape != expected:
        raise ValueError(f"loss gradient shape {g.shape} does not match output shape {expected}")
    deltas = [None] * len(model)
    for i in range(len(model) - 1, -1, -1):
        layer = model.layers[i]
        if layer.activation == "relu":
            # ReLU'(0) := 0
            g = g * (cache.pre[i] > 0.0)
        deltas[i] = g
        if i:
            g = g @ layer.weight
    return deltas


def backprop(model: Sequential, cache: ForwardCache, loss_grad) -> tuple[GradientSet, np.ndarray]:
    """Gradients summed over the batch, plus the gradient w.r.t. the model input."""
    deltas = _deltas(model, cache, loss_grad)
    weights = [d.T @ a for d, a in zip(deltas, cache.inputs)]
    biases = [d.sum(axis=0) for d in deltas]
    return GradientSet(weights, biases), deltas[0] @ model.layers[0].weight


def backward(model: Sequential, cache: ForwardCache, loss_grad) -> GradientSet:
    return backprop(model, cache, loss_grad)[0]


def per_sample_gradients(model: Sequential, cache: ForwardCache, loss_grad) -> list[GradientSet]:
    """One GradientSet per batch row; their sum equals :func:`backward`."""
    deltas = _deltas(model, cache, loss_grad)
    ws = [np.einsum("so,si->soi", d, a) for d, a in zip(deltas, cache.inputs)]
    n = deltas[0].shape[0]
    return [GradientSet([w[s] for w in ws], [d[s] for d in deltas]) for s in range(n)]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_softmax_ce(logits, labels, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """Softmax cross-entropy.

    With ``reduction="mean"`` the gradient is ``(softmax - onehot) / batch``;
    ``"sum"`` drops the division (per-sample gradients summed).
    """
    z = _as_batch(logits)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = z.shape
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} rows of logits")
    if np.any((y < 0) | (y >= c)):
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    nll = log_norm - shifted[np.arange(n), y]
    grad = softmax(z)
    grad[np.arange(n), y] -= 1.0
    if reduction == "mean":
        return float(nll.mean()), grad / n
    if reduction == "sum":
        return float(nll.sum()), grad
    raise ValueError(f"unknown reduction {reduction!r}")


def loss_mse(pred, target) -> tuple[float, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    r = p - t
    return float(np.mean(r * r)), 2.0 * r / r.size


def _apply(model: Sequential, updates: GradientSet) -> Sequential:
    return Sequential(tuple(
        DenseLayer(l.weight - uw, l.bias - ub, l.activation)
        for l, uw, ub in zip(model.layers, updates.weights, updates.biases)
    ))


def sgd_step(model: Sequential, grads: GradientSet, lr: float) -> Sequential:
    """theta <- theta - lr * grads, returning a new model."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not grads.congruent(model):
        raise ValueError("gradient set is not shape-congruent with the model")
    if not grads.is_finite():
        raise ValueError("non-finite gradient")
    return _apply(model, grads * lr)


@dataclass
class Adam:
    """Adam optimiser; holds moment state, returns new models from :meth:`step`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, model: Sequential, grads: GradientSet) -> Sequential:
        if not grads.is_finite():
            raise ValueError("non-finite gradient")
        arrays = grads.arrays()
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        upd = []
        for i, g in enumerate(arrays):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            upd.append(self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return _apply(model, GradientSet(upd[0::2], upd[1::2]))
