"""Two-phase reconstruction attack by a malicious server.

Offline: train a surrogate autoencoder on auxiliary data, fit the brightness
CDF of its LSRs, craft the leak layers and assemble the adversarial model.
Online: broadcast, collect the securely aggregated update, recover LSRs bin by
bin and decode them into images.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AutoencoderPair, TrainConfig, decode, encode, train_autoencoder
from .data import Dataset
from .fedsim import (FEDAVG, FEDSGD, NO_DP, ClientState, DpConfig, approx_aggregated_gradient,
                     client_round, secure_aggregate, server_aggregate)
from .leakage import (EmpiricalCdf, RecoveredBins, assemble_adversarial_model, craft_leak_module,
                      fit_cdf, recover_lsrs)
from .models import ArchSpec, GlobalModel
from .nn import GradientSet, Sequential, build_mlp
from .rng import STREAM_CLIENT, STREAM_TAIL, SeededRng

log = logging.getLogger(__name__)

PSNR_CAP = 300.0


@dataclass(frozen=True, eq=False)
class AttackPlan:
    arch: ArchSpec
    aux: Dataset | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    w2_row_value: float = 1.0
    mode: str = FEDSGD
    dp: DpConfig = NO_DP
    seed: int = 0
    clients: int = 8
    local_iters: int = 1
    local_lr: float = 1e-3
    secure: bool = True
    th: float = 18.0
    matching: str = "greedy"

    def __post_init__(self):
        if self.aux is not None and self.aux.input_dim != self.arch.input_dim:
            raise ValueError(f"auxiliary samples have {self.aux.input_dim} features, "
                             f"architecture expects {self.arch.input_dim}")
        if self.mode not in (FEDSGD, FEDAVG):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.clients < 1:
            raise ValueError("need at least one client")

    @property
    def k(self) -> int:
        return self.arch.k

    @property
    def d(self) -> int:
        return self.arch.d


@dataclass(frozen=True, eq=False)
class Prepared:
    model: GlobalModel
    autoencoder: AutoencoderPair
    cdf: EmpiricalCdf | None = None
    history: tuple[float, ...] = ()


def craft_tail(arch: ArchSpec, rng: SeededRng) -> Sequential:
    """Layers after the leak module (``o -> classes``), randomly initialised."""
    return build_mlp((arch.o, arch.classes), ("identity",), rng)


def prepare(plan: AttackPlan) -> Prepared:
    """Offline phase: surrogate autoencoder, LSR brightness CDF, crafted model."""
    if plan.aux is None or len(plan.aux) == 0:
        raise ValueError("auxiliary dataset is empty")
    pair, history = train_autoencoder(plan.aux, plan.arch, plan.train)
    lsr = encode(pair, plan.aux.flat())
    cdf = fit_cdf(lsr)
    leak = craft_leak_module(cdf, plan.arch.k, plan.arch.d, plan.arch.o, plan.w2_row_value)
    tail = craft_tail(plan.arch, SeededRng(plan.seed).child(STREAM_TAIL))
    model = assemble_adversarial_model(pair.mean_encoder(), leak, tail)
    return Prepared(model, pair, cdf, tuple(history))


def make_clients(images, labels, n_clients: int, local_iters: int = 1,
                 local_lr: float = 1e-3) -> list[ClientState]:
    """Split a global batch into contiguous client shards weighted by shard size."""
    x = np.asarray(images, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    y = np.asarray(labels).reshape(-1)
    m = x.shape[0]
    n = max(1, min(n_clients, m))
    shards = np.array_split(np.arange(m), n)
    return [ClientState(i, x[s], y[s], local_iters, local_lr, len(s) / m)
            for i, s in enumerate(shards)]


def execute_round(model: GlobalModel, clients: list[ClientState], mode: str = FEDSGD,
                  dp: DpConfig = NO_DP, rng: SeededRng | None = None,
                  secure: bool = True) -> GradientSet:
    """Broadcast ``model``, run every client and return only the aggregate.

    Clients pre-multiply their payload by their weight so that the masked sum
    is already the weighted aggregate. With one client there is nothing to
    mask against and the payload is returned as is.
    """
    rng = rng or SeededRng(0)
    weighted = []
    for c in clients:
        upd = client_round(c, model, mode, dp, rng.child(STREAM_CLIENT, c.id))
        weighted.append(upd.payload * c.weight)
    if secure and len(weighted) >= 2:
        _, aggregate = secure_aggregate(weighted, rng)
        return aggregate
    return server_aggregate(weighted, [1.0] * len(weighted))


def reconstruct(aggregate: GradientSet, model: GlobalModel, pair: AutoencoderPair,
                mode: str = FEDSGD) -> tuple[np.ndarray, RecoveredBins]:
    """Recover LSRs from the leak-layer gradients and decode them."""
    grads = approx_aggregated_gradient(model, aggregate) if mode == FEDAVG else aggregate
    i = model.leak_layers[0]
    bins = recover_lsrs(grads.weights[i], grads.biases[i])
    lsrs = bins.batch()
    if lsrs.shape[0] == 0:
        log.warning("all %d bins are empty; nothing to reconstruct", bins.k)
        return np.zeros((0, pair.input_dim)), bins
    return decode(pair, lsrs), bins


def psnr(original, reconstructed, max_i: float = 1.0) -> float:
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not max_i > 0:
        raise ValueError("max_i must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-15:
        return PSNR_CAP
    return float(20.0 * np.log10(max_i / np.sqrt(mse)))


def psnr_matrix(originals, recovered, max_i: float = 1.0) -> np.ndarray:
    """PSNR of every (original, recovered) pair, capped like :func:`psnr`."""
    a = np.asarray(originals, dtype=np.float64).reshape(len(originals), -1)
    b = np.asarray(recovered, dtype=np.float64)
    b = b.reshape(len(b), -1) if len(b) else np.zeros((0, a.shape[1]))
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"image sizes differ: {a.shape[1]} vs {b.shape[1]}")
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    mse = np.maximum(sq, 0.0) / a.shape[1]
    # the expansion above loses precision for near-identical pairs; redo those directly
    close = mse < 1e-6
    for i, j in zip(*np.nonzero(close)):
        mse[i, j] = np.mean((a[i] - b[j]) ** 2)
    out = np.full(mse.shape, PSNR_CAP)
    ok = mse >= 1e-15
    out[ok] = 20.0 * np.log10(max_i / np.sqrt(mse[ok]))
    return out


@dataclass
class MatchResult:
    matches: list[tuple[int, int, float]]
    rate: float
    mean_psnr_success: float
    per_sample_psnr: np.ndarray
    best_psnr: np.ndarray


def greedy_assignment(scores: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one pairs by descending score; ties by lower row, then lower column."""
    m, r = scores.shape
    if m == 0 or r == 0:
        return []
    rows, cols = np.indices(scores.shape)
    order = np.lexsort((cols.ravel(), rows.ravel(), -scores.ravel()))
    used_r = np.zeros(m, bool)
    used_c = np.zeros(r, bool)
    pairs = []
    for flat in order:
        i, j = divmod(int(flat), r)
        if used_r[i] or used_c[j]:
            continue
        used_r[i] = used_c[j] = True
        pairs.append((i, j))
        if len(pairs) == min(m, r):
            break
    return pairs


def match_and_rate(originals, recovered, th: float = 18.0, bin_indices=None,
                   matching: str = "greedy", max_i: float = 1.0) -> MatchResult:
    """Pair reconstructions with originals and score the reconstruction rate.

    ``greedy`` pairs one-to-one by descending PSNR; ``nearest`` lets every
    original take its best reconstruction. ``per_sample_psnr`` holds each
    original's matched PSNR and NaN for originals left unmatched, so a
    collided reconstruction is credited to one original only. ``best_psnr``
    is each original's best PSNR against any reconstruction.
    """
    if not th > 0:
        raise ValueError("threshold must be positive")
    orig = np.asarray(originals, dtype=np.float64)
    if orig.shape[0] == 0:
        raise ValueError("no original samples")
    rec = np.asarray(recovered, dtype=np.float64).reshape(-1, orig[0].size) if len(recovered) else np.zeros((0, orig[0].size))
    m = orig.shape[0]
    bins = np.arange(rec.shape[0]) if bin_indices is None else np.asarray(bin_indices)
    scores = psnr_matrix(orig, rec, max_i)
    if matching == "greedy":
        pairs = greedy_assignment(scores)
    elif matching == "nearest":
        pairs = [(i, int(np.argmax(scores[i]))) for i in range(m)] if rec.shape[0] else []
    else:
        raise ValueError(f"unknown matching {matching!r}")
    best = scores.max(axis=1) if rec.shape[0] else np.zeros(m)
    per_sample = np.full(m, np.nan)
    matches = []
    for i, j in sorted(pairs):
        per_sample[i] = scores[i, j]
        matches.append((i, int(bins[j]), float(scores[i, j])))
    good = [p for _, _, p in matches if p >= th]
    return MatchResult(matches, len(good) / m, float(np.mean(good)) if good else 0.0, per_sample, best)


@dataclass
class ReconstructionReport:
    recovered_images: np.ndarray
    per_bin_status: list[str]
    matches: list[tuple[int, int, float]]
    rate: float
    mean_psnr_success: float
    wall_time_seconds: float
    m: int
    k: int
    per_sample_psnr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_psnr: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def recovered_bins(self) -> list[int]:
        return [i for i, s in enumerate(self.per_bin_status) if s == "recovered"]


def attack_batch(prepared: Prepared, plan: AttackPlan, images, labels,
                 rng: SeededRng) -> ReconstructionReport:
    """One full online round against a global batch."""
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    clients = make_clients(x, labels, plan.clients, plan.local_iters, plan.local_lr)
    aggregate = execute_round(prepared.model, clients, plan.mode, plan.dp, rng, plan.secure)
    t0 = time.perf_counter()
    rec, bins = reconstruct(aggregate, prepared.model, prepared.autoencoder, plan.mode)
    elapsed = time.perf_counter() - t0
    res = match_and_rate(x, rec, plan.th, bins.indices, plan.matching)
    return ReconstructionReport(rec, bins.statuses(), res.matches, res.rate,
                                res.mean_psnr_success, elapsed, x.shape[0], bins.k,
                                res.per_sample_psnr, res.best_psnr)


def sample_batch(pool: Dataset, m: int, rng: SeededRng) -> Dataset:
    if m > len(pool):
        raise ValueError(f"batch of {m} requested from a pool of {len(pool)}")
    idx = rng.generator().choice(len(pool), size=m, replace=False)
    return pool.subset(np.sort(idx))


def run_experiment(plan: AttackPlan, prepared: Prepared, pool: Dataset, batch_sizes,
                   trials: int) -> dict:
    """Batch-size sweep: fresh client data per (batch size, trial), one round each."""
    rows = []
    summary = []
    for m in batch_sizes:
        rates, psnrs, times = [], [], []
        for t in range(trials):
            rng = SeededRng(plan.seed).child(STREAM_CLIENT, int(m), t)
            batch = sample_batch(pool, int(m), rng.child(0))
            rep = attack_batch(prepared, plan, batch.images, batch.labels, rng.child(1))
            rows.append({"m": int(m), "trial": t, "rate": rep.rate,
                         "mean_psnr": rep.mean_psnr_success, "time": rep.wall_time_seconds})
            rates.append(rep.rate)
            psnrs.append(rep.mean_psnr_success)
            times.append(rep.wall_time_seconds)
        summary.append({"m": int(m), "rate_mean": float(np.mean(rates)), "rate_std": float(np.std(rates)),
                        "psnr_mean": float(np.mean(psnrs)), "psnr_std": float(np.std(psnrs)),
                        "time_mean": float(np.mean(times)), "time_std": float(np.std(times))})
    return {"k": plan.k, "trials": trials, "rows": rows, "summary": summary}
