"""One federated round: local training, optional DP-SGD, pairwise-mask secure
aggregation and server-side aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GlobalModel
from .nn import DenseLayer, GradientSet, Sequential, backward, forward, loss_softmax_ce, per_sample_gradients, sgd_step
from .rng import STREAM_DP, STREAM_MASK, SeededRng

FEDSGD = "fedsgd"
FEDAVG = "fedavg"
MODES = (FEDSGD, FEDAVG)


@dataclass(frozen=True, eq=False)
class ClientState:
    id: int
    images: np.ndarray  # (m_i, features), flattened
    labels: np.ndarray
    local_iters: int = 1
    local_lr: float = 1e-3
    weight: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.images, dtype=np.float64)
        object.__setattr__(self, "images", x.reshape(x.shape[0], -1) if x.ndim > 1 else x[None, :])
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))
        if self.local_iters < 1 or not self.local_lr > 0:
            raise ValueError("need local_iters >= 1 and local_lr > 0")
        if not 0 < self.weight <= 1:
            raise ValueError("client weight must lie in (0, 1]")

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise multiplier must be >= 0")


NO_DP = DpConfig()


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    kind: str  # "gradient_sum" | "param_delta"
    payload: GradientSet
    sample_count: int


@dataclass(frozen=True, eq=False)
class MaskedUpdate:
    payload: GradientSet


def normalize_weights(clients: list[ClientState]) -> list[ClientState]:
    """Rescale client weights so they sum to one."""
    total = sum(c.weight for c in clients)
    return [ClientState(c.id, c.images, c.labels, c.local_iters, c.local_lr, c.weight / total)
            for c in clients]


def dp_clip_and_noise(per_sample_grads: list[GradientSet], dp: DpConfig, rng: SeededRng) -> GradientSet:
    """Clip each sample's gradient to global l2 norm C, sum, add N(0, (sigma C)^2) per coordinate."""
    if not dp.clip_norm > 0:
        raise ValueError("clip norm must be positive")
    if not per_sample_grads:
        raise ValueError("no per-sample gradients")
    total = None
    for g in per_sample_grads:
        norm = g.norm()
        scaled = g * min(1.0, dp.clip_norm / norm) if norm > 0 else g
        total = scaled if total is None else total + scaled
    if dp.noise_multiplier > 0:
        gen = rng.generator()
        sd = dp.noise_multiplier * dp.clip_norm
        total = GradientSet([w + gen.normal(0.0, sd, w.shape) for w in total.weights],
                            [b + gen.normal(0.0, sd, b.shape) for b in total.biases])
    return total


def client_gradient_sum(model: GlobalModel, client: ClientState, dp: DpConfig, rng: SeededRng) -> GradientSet:
    """Sum of per-sample loss gradients on the client's batch (DP-processed if enabled)."""
    cache, logits = forward(model.net, client.images)
    _, g = loss_softmax_ce(logits, client.labels, reduction="sum")
    if dp.enabled:
        return dp_clip_and_noise(per_sample_gradients(model.net, cache, g), dp, rng)
    return backward(model.net, cache, g)


def client_round(client: ClientState, model: GlobalModel, mode: str, dp: DpConfig,
                 rng: SeededRng) -> ClientUpdate:
    if client.size == 0:
        raise ValueError(f"client {client.id} has no local data")
    if client.images.shape[1] != model.net.in_features:
        raise ValueError(f"client {client.id} data has {client.images.shape[1]} features, "
                         f"model expects {model.net.in_features}")
    if mode == FEDSGD:
        g = client_gradient_sum(model, client, dp, rng.child(STREAM_DP, 0))
        return ClientUpdate("gradient_sum", g * (1.0 / client.size), client.size)
    if mode == FEDAVG:
        net = model.net
        for it in range(client.local_iters):
            g = client_gradient_sum(model.with_net(net), client, dp, rng.child(STREAM_DP, it))
            net = sgd_step(net, g * (1.0 / client.size), client.local_lr)
        return ClientUpdate("param_delta", GradientSet.from_model(net), client.size)
    raise ValueError(f"unknown mode {mode!r}")


def pair_masks(like: GradientSet, n: int, bound: float, rng: SeededRng) -> dict[tuple[int, int], GradientSet]:
    """One mask s_ij per client pair i < j, uniform in [-bound, bound], from its own stream."""
    out = {}
    for i in range(n):
        for j in range(i + 1, n):
            gen = rng.child(i, j).generator()
            out[i, j] = GradientSet([gen.uniform(-bound, bound, w.shape) for w in like.weights],
                                    [gen.uniform(-bound, bound, b.shape) for b in like.biases])
    return out


def client_masks(pairs: dict[tuple[int, int], GradientSet], n: int) -> list[GradientSet]:
    """Client i adds s_ij for j > i and subtracts s_ji for j < i."""
    like = next(iter(pairs.values()))
    masks = [GradientSet.zeros_congruent(like) for _ in range(n)]
    for (i, j), s in pairs.items():
        masks[i] = masks[i] + s
        masks[j] = masks[j] - s
    return masks


def _sum_in_order(sets: list[GradientSet]) -> GradientSet:
    total = sets[0]
    for s in sets[1:]:
        total = total + s
    return total


def secure_aggregate(updates: list, rng: SeededRng,
                     bound_factor: float = 1e3) -> tuple[list[MaskedUpdate], GradientSet]:
    """Mask each update with pairwise additive masks and sum the masked payloads.

    The mask bound is ``bound_factor * max|delta|`` over all updates.
    """
    payloads = [u.payload if isinstance(u, ClientUpdate) else u for u in updates]
    if len(payloads) < 2:
        raise ValueError("secure aggregation needs at least 2 clients")
    for p in payloads[1:]:
        if not p.congruent(payloads[0]):
            raise ValueError("client updates have incongruent shapes")
    bound = bound_factor * max(1e-300, max(p.max_abs() for p in payloads))
    pairs = pair_masks(payloads[0], len(payloads), bound, rng.child(STREAM_MASK))
    masks = client_masks(pairs, len(payloads))
    masked = [MaskedUpdate(p + m) for p, m in zip(payloads, masks)]
    return masked, _sum_in_order([m.payload for m in masked])


def server_aggregate(updates: list, weights) -> GradientSet:
    """Weighted sum of (raw or masked) payloads in ascending client order."""
    payloads = [getattr(u, "payload", u) for u in updates]
    w = [float(a) for a in weights]
    if len(w) != len(payloads) or not payloads:
        raise ValueError(f"{len(payloads)} updates but {len(w)} weights")
    return _sum_in_order([p * a for p, a in zip(payloads, w)])


def approx_aggregated_gradient(theta_broadcast, aggregated_params: GradientSet,
                               leak_layers_only: tuple[int, ...] | None = None) -> GradientSet:
    """``theta_broadcast - aggregated_params`` with no rescaling.

    Recovery divides gradient differences by gradient differences, so any
    common factor (learning rate, iteration count) cancels; do not "fix" this
    by dividing by the learning rate.
    """
    theta = theta_broadcast
    if isinstance(theta, GlobalModel):
        theta = theta.net
    if not isinstance(theta, GradientSet):
        theta = GradientSet.from_model(theta)
    if not theta.congruent(aggregated_params):
        raise ValueError("broadcast parameters and aggregate have different shapes")
    g = theta - aggregated_params
    return g.restrict(leak_layers_only) if leak_layers_only is not None else g


def apply_update(model: GlobalModel, aggregate: GradientSet, mode: str, lr: float = 1.0) -> GlobalModel:
    """Server step: FedSGD descends along the aggregate, FedAVG adopts it."""
    if mode == FEDSGD:
        return model.with_net(sgd_step(model.net, aggregate, lr))
    layers = tuple(DenseLayer(w, b, l.activation)
                   for l, w, b in zip(model.net.layers, aggregate.weights, aggregate.biases))
    return model.with_net(Sequential(layers))
