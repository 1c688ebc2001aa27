"""Independent reference computations used as test oracles, plus instance builders.

Oracles here deliberately avoid the library's own code paths: plain Python
loops, central finite differences and exhaustive search.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from latentleak.fedsim import FEDSGD, NO_DP, ClientState
from latentleak.leakage import assemble_adversarial_model, craft_leak_module, fit_cdf
from latentleak.nn import DenseLayer, Sequential, build_mlp
from latentleak.rng import SeededRng


# --- reference forward pass and losses ------------------------------------

def naive_forward(net: Sequential, x) -> np.ndarray:
    rows = []
    for sample in np.asarray(x, dtype=float):
        v = [float(t) for t in sample]
        for layer in net.layers:
            w, b = layer.weight.tolist(), layer.bias.tolist()
            nxt = []
            for i in range(len(b)):
                s = b[i]
                for j, vj in enumerate(v):
                    s += w[i][j] * vj
                nxt.append(max(s, 0.0) if layer.activation == "relu" else s)
            v = nxt
        rows.append(v)
    return np.array(rows)


def naive_ce(logits, labels, reduction: str = "mean") -> float:
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=float), labels):
        top = max(row)
        lse = top + math.log(sum(math.exp(t - top) for t in row))
        total += lse - row[int(y)]
    return total / len(labels) if reduction == "mean" else total


def naive_mse(pred, target) -> float:
    p, t = np.asarray(pred, dtype=float).ravel(), np.asarray(target, dtype=float).ravel()
    return sum((a - b) ** 2 for a, b in zip(p, t)) / p.size


def relu_pattern(net: Sequential, x) -> tuple:
    pats = []
    v = np.asarray(x, dtype=float)
    for layer in net.layers:
        pre = v @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            pats.append((pre > 0).tobytes())
            v = np.maximum(pre, 0)
        else:
            v = pre
    return tuple(pats)


def with_param(net: Sequential, layer: int, kind: str, idx, value: float) -> Sequential:
    lay = net.layers[layer]
    w, b = lay.weight.copy(), lay.bias.copy()
    (w if kind == "w" else b)[idx] = value
    return net.replace(layer, DenseLayer(w, b, lay.activation))


def fd_check(net: Sequential, loss_fn, grads, x, step: float = 1e-5):
    """Central finite differences for every parameter.

    Parameters whose perturbation flips any ReLU pattern are skipped (the
    subgradient there makes finite differences meaningless). Returns
    (max relative error, checked count, skipped count).
    """
    base_pat = relu_pattern(net, x)
    worst, checked, skipped = 0.0, 0, 0
    for li, layer in enumerate(net.layers):
        for kind, arr, garr in (("w", layer.weight, grads.weights[li]), ("b", layer.bias, grads.biases[li])):
            for idx in np.ndindex(arr.shape):
                v = float(arr[idx])
                up, dn = with_param(net, li, kind, idx, v + step), with_param(net, li, kind, idx, v - step)
                if relu_pattern(up, x) != base_pat or relu_pattern(dn, x) != base_pat:
                    skipped += 1
                    continue
                fd = (loss_fn(up) - loss_fn(dn)) / (2 * step)
                an = float(garr[idx])
                err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
                worst = max(worst, err)
                checked += 1
    return worst, checked, skipped


def naive_psnr(a, b, max_i: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    sq = 0.0
    for u, v in zip(a, b):
        sq += (u - v) ** 2
    mse = sq / a.size
    if mse < 1e-15:
        return 300.0
    return 20.0 * math.log10(max_i / math.sqrt(mse))


def best_rate_assignment(scores: np.ndarray, th: float) -> int:
    """Exhaustive search for the one-to-one pairing maximising #pairs >= th."""
    m, r = scores.shape
    best = 0
    if r >= m:
        for perm in itertools.permutations(range(r), m):
            best = max(best, sum(scores[i, j] >= th for i, j in enumerate(perm)))
    else:
        for perm in itertools.permutations(range(m), r):
            best = max(best, sum(scores[i, j] >= th for j, i in enumerate(perm)))
    return best


# --- instance builders ----------------------------------------------------

def leak_net(z_reference, k: int, d: int, o: int = 8, classes: int = 5, seed: int = 0,
             w2_row_value: float = 1.0):
    """Crafted leak module (no encoder) followed by a random linear tail."""
    leak = craft_leak_module(fit_cdf(z_reference), k, d, o, w2_row_value)
    tail = build_mlp((o, classes), ("identity",), SeededRng(seed).child(99))
    return leak, assemble_adversarial_model(None, leak, tail)


def clients_from(z, labels, n: int) -> list[ClientState]:
    shards = np.array_split(np.arange(len(z)), n)
    return [ClientState(i, z[s], labels[s], weight=len(s) / len(z)) for i, s in enumerate(shards) if len(s)]


__all__ = ["naive_forward", "naive_ce", "naive_mse", "fd_check", "naive_psnr", "best_rate_assignment",
           "leak_net", "clients_from", "FEDSGD", "NO_DP"]
