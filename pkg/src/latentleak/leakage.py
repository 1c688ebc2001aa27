"""Closed-form linear leakage over latent-space representations (LSRs).

A two-layer module ``y = relu(w1 x + b1)``, ``z = w2 y + b2`` is crafted so
that every row of ``w1`` averages its input (the *brightness* of the LSR),
the biases ``-h_1 <= ... `` cut the brightness distribution into equally
likely bins, and all entries of ``w2`` are equal. Neuron ``r`` then fires for
a sample exactly when its brightness exceeds ``h_r``, and every active neuron
receives the same upstream gradient. Differencing the aggregated gradients of
adjacent neurons isolates the samples of each bin; a bin holding a single
sample yields that sample's LSR exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GlobalModel
from .nn import DenseLayer, Sequential


def brightness(lsr) -> np.ndarray | float:
    """Mean of the LSR entries; row-wise for a 2-D batch."""
    x = np.asarray(lsr, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("brightness of an empty vector is undefined")
    out = x.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    sorted_values: np.ndarray

    def __post_init__(self):
        v = np.array(self.sorted_values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValueError("empirical CDF needs at least one value")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be sorted ascending")
        v.setflags(write=False)
        object.__setattr__(self, "sorted_values", v)

    def __len__(self):
        return self.sorted_values.size

    def __call__(self, x):
        """Fraction of stored values <= x."""
        return np.searchsorted(self.sorted_values, x, side="right") / len(self)

    def inverse(self, q):
        return inverse_cdf(self, q)


def fit_cdf(lsr_batch) -> EmpiricalCdf:
    x = np.asarray(lsr_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("fit_cdf needs a 2-D batch with at least 2 rows")
    return EmpiricalCdf(np.sort(brightness(x)))


def inverse_cdf(cdf: EmpiricalCdf, q):
    """Quantile by linear interpolation between order statistics.

    Position ``p = q (n - 1)`` on the 0-indexed sorted values.
    """
    qa = np.asarray(q, dtype=np.float64)
    if np.any(~(qa > 0.0) | ~(qa < 1.0)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    v = cdf.sorted_values
    p = qa * (v.size - 1)
    lo = np.floor(p).astype(np.int64)
    hi = np.minimum(lo + 1, v.size - 1)
    out = v[lo] + (p - lo) * (v[hi] - v[lo])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class LinearLeakModule:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def k(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def o(self) -> int:
        return self.w2.shape[0]

    @property
    def thresholds(self) -> np.ndarray:
        """Bin edges ``h`` (the negated first-layer bias)."""
        return -self.b1

    def layers(self) -> tuple[DenseLayer, DenseLayer]:
        return (DenseLayer(self.w1, self.b1, "relu"), DenseLayer(self.w2, self.b2, "identity"))

    def as_model(self, tail: Sequential | None = None) -> Sequential:
        net = Sequential(self.layers())
        return net + tail if tail is not None else net


def craft_leak_module(cdf: EmpiricalCdf, k: int, d: int, o: int,
                      w2_row_value: float = 1.0) -> LinearLeakModule:
    """Thresholds at the interior quantiles ``i/(k+1)``, i = 1..k."""
    if k < 2 or d < 1 or o < 1:
        raise ValueError(f"need k >= 2, d >= 1, o >= 1 (got k={k}, d={d}, o={o})")
    if cdf.sorted_values[0] == cdf.sorted_values[-1]:
        raise ValueError("degenerate CDF: all brightness values are equal, every bin coincides")
    if w2_row_value == 0:
        raise ValueError("w2_row_value must be nonzero")
    h = inverse_cdf(cdf, np.arange(1, k + 1) / (k + 1))
    return LinearLeakModule(
        w1=np.full((k, d), 1.0 / d),
        b1=-h,
        w2=np.full((o, k), float(w2_row_value)),
        b2=np.zeros(o),
    )


@dataclass(frozen=True, eq=False)
class RecoveredBins:
    """Bin ``r`` is recovered when ``recovered[r]``; its LSR is ``lsrs[r]``."""

    recovered: np.ndarray
    lsrs: np.ndarray

    @property
    def k(self) -> int:
        return self.recovered.size

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.recovered)

    def batch(self) -> np.ndarray:
        return self.lsrs[self.recovered]

    def statuses(self) -> list[str]:
        return ["recovered" if r else "empty" for r in self.recovered]


def recover_lsrs(grad_w1, grad_b1, eps_rel: float = 1e-9) -> RecoveredBins:
    gw = np.asarray(grad_w1, dtype=np.float64)
    gb = np.asarray(grad_b1, dtype=np.float64).ravel()
    if gw.ndim != 2 or gw.shape[0] != gb.size:
        raise ValueError(f"grad_w1 {gw.shape} and grad_b1 {gb.shape} are inconsistent")
    if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
        raise ValueError("non-finite gradients")
    # row k+1 is defined as zero
    dw = np.vstack([gw[1:], np.zeros((1, gw.shape[1]))]) - gw
    db = np.append(gb[1:], 0.0) - gb
    eps = eps_rel * max(1.0, float(np.max(np.abs(gb))) if gb.size else 0.0)
    ok = np.abs(db) > eps
    lsrs = np.zeros_like(gw)
    lsrs[ok] = dw[ok] / db[ok, None]
    return RecoveredBins(ok, lsrs)


@dataclass(frozen=True)
class Occupancy:
    counts: np.ndarray
    below: int

    @property
    def singly(self) -> np.ndarray:
        return self.counts == 1

    @property
    def occupied(self) -> np.ndarray:
        return self.counts >= 1


def bin_occupancy_oracle(brightness_list, h) -> Occupancy:
    """Brute-force count of samples in each bin ``(h_r, h_{r+1}]`` with ``h_{k+1} = inf``."""
    h = [float(v) for v in np.asarray(h, dtype=np.float64).ravel()]
    if any(b < a for a, b in zip(h, h[1:])):
        raise ValueError("thresholds must be sorted ascending")
    counts = [0] * len(h)
    below = 0
    for b in np.asarray(brightness_list, dtype=np.float64).ravel():
        placed = False
        for r in range(len(h)):
            upper = h[r + 1] if r + 1 < len(h) else float("inf")
            if h[r] < b <= upper:
                counts[r] += 1
                placed = True
                break
        if not placed:
            below += 1
    return Occupancy(np.array(counts, dtype=np.int64), below)


def assign_bins(brightness_values, h) -> np.ndarray:
    """Vectorised bin index per sample, -1 for samples at or below ``h_1``."""
    return np.searchsorted(np.asarray(h), np.asarray(brightness_values), side="left") - 1


def assemble_adversarial_model(encoder: Sequential | None, leak: LinearLeakModule,
                               head_tail: Sequential | None = None) -> GlobalModel:
    if encoder is not None and encoder.out_features != leak.d:
        raise ValueError(f"encoder outputs {encoder.out_features} features but the leak module expects {leak.d}")
    net = leak.as_model(head_tail)
    if encoder is not None:
        net = encoder + net
    return GlobalModel(net, len(encoder) if encoder is not None else 0)


def leak_gradients(grads, model: GlobalModel) -> tuple[np.ndarray, np.ndarray]:
    """(grad_w1, grad_b1) of the first leak layer from a full-model GradientSet."""
    i = model.leak_layers[0]
    return grads.weights[i], grads.biases[i]
