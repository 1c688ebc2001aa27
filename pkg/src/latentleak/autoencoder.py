"""Surrogate autoencoder: encoder mirrors the global model's encoder, decoder
is the generative half used to turn recovered LSRs back into images."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .models import ArchSpec
from .nn import Adam, DenseLayer, Sequential, backprop, build_mlp, forward, loss_mse, predict, sgd_step
from .rng import STREAM_INIT, STREAM_REPARAM, STREAM_SHUFFLE, SeededRng

log = logging.getLogger(__name__)

MODES = ("plain", "vae")


@dataclass(frozen=True, eq=False)
class AutoencoderPair:
    encoder: Sequential
    decoder: Sequential
    mode: str = "plain"
    beta: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        width = self.encoder.out_features
        if self.mode == "vae":
            if width % 2:
                raise ValueError("vae encoder must output 2d features (mu || log-variance)")
            width //= 2
        if width != self.decoder.in_features:
            raise ValueError(f"encoder latent width {width} != decoder input width {self.decoder.in_features}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def d(self) -> int:
        return self.decoder.in_features

    @property
    def input_dim(self) -> int:
        return self.encoder.in_features

    def mean_encoder(self) -> Sequential:
        """Deterministic encoder producing the LSR (mu only in vae mode)."""
        if self.mode == "plain":
            return self.encoder
        last = self.encoder[-1]
        mu = DenseLayer(last.weight[: self.d], last.bias[: self.d], last.activation)
        return self.encoder.replace(len(self.encoder) - 1, mu)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    mode: str = "plain"
    beta: float = 1e-3
    warmup: float = 0.2
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("need epochs >= 1, batch_size >= 1, lr > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


def init_autoencoder(arch: ArchSpec, mode: str, beta: float, rng: SeededRng) -> AutoencoderPair:
    enc_widths = list(arch.encoder_widths)
    if mode == "vae":
        enc_widths[-1] *= 2
    enc = build_mlp(enc_widths, arch.encoder_activations, rng.child(0))
    dec = build_mlp(arch.decoder_widths, arch.decoder_activations, rng.child(1))
    return AutoencoderPair(enc, dec, mode, beta)


def kl_gaussian(mu, logvar) -> float:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over units, averaged over rows."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    lv = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    return float(-0.5 * np.sum(1.0 + lv - mu ** 2 - np.exp(lv)) / mu.shape[0])


def kl_gaussian_grad(mu, logvar) -> tuple[np.ndarray, np.ndarray]:
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    lv = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    n = mu.shape[0]
    return mu / n, -0.5 * (1.0 - np.exp(lv)) / n


def _flat(data) -> np.ndarray:
    x = np.asarray(getattr(data, "images", data), dtype=np.float64)
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else np.atleast_2d(x)


def train_autoencoder(aux, arch: ArchSpec, cfg: TrainConfig,
                      pair: AutoencoderPair | None = None) -> tuple[AutoencoderPair, list[float]]:
    """Minimise reconstruction MSE (plus ``beta * KL`` in vae mode) on ``aux``.

    Returns the trained pair and the mean training loss of every epoch.
    """
    x = _flat(aux)
    if x.shape[0] == 0:
        raise ValueError("auxiliary dataset is empty")
    if x.shape[1] != arch.input_dim:
        raise ValueError(f"samples have {x.shape[1]} features, architecture expects {arch.input_dim}")
    rng = SeededRng(cfg.seed)
    if pair is None:
        pair = init_autoencoder(arch, cfg.mode, cfg.beta, rng.child(STREAM_INIT))
    enc, dec = pair.encoder, pair.decoder
    opt_e, opt_d = Adam(cfg.lr), Adam(cfg.lr)
    vae = pair.mode == "vae"
    d = pair.d
    n = x.shape[0]
    history = []
    warm = max(1, int(round(cfg.warmup * cfg.epochs)))
    for epoch in range(cfg.epochs):
        beta = cfg.beta * min(1.0, (epoch + 1) / warm) if vae else 0.0
        order = SeededRng(cfg.seed).child(STREAM_SHUFFLE, epoch).generator().permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            xb = x[order[start:start + cfg.batch_size]]
            enc_cache, h = forward(enc, xb)
            if vae:
                mu, lv = h[:, :d], h[:, d:]
                eps = rng.child(STREAM_REPARAM, epoch, b).generator().standard_normal(mu.shape)
                std = np.exp(0.5 * lv)
                z = mu + std * eps
            else:
                z = h
            dec_cache, out = forward(dec, z)
            loss, g_out = loss_mse(out, xb)
            g_dec, g_z = backprop(dec, dec_cache, g_out)
            if vae:
                loss += beta * kl_gaussian(mu, lv)
                kmu, klv = kl_gaussian_grad(mu, lv)
                g_h = np.hstack([g_z + beta * kmu, g_z * eps * 0.5 * std + beta * klv])
            else:
                g_h = g_z
            g_enc, _ = backprop(enc, enc_cache, g_h)
            if cfg.optimizer == "adam":
                enc, dec = opt_e.step(enc, g_enc), opt_d.step(dec, g_dec)
            else:
                enc, dec = sgd_step(enc, g_enc, cfg.lr), sgd_step(dec, g_dec, cfg.lr)
            total += loss * xb.shape[0]
        history.append(total / n)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, history[-1])
    return AutoencoderPair(enc, dec, pair.mode, cfg.beta if vae else pair.beta), history


def encode(pair: AutoencoderPair, batch) -> np.ndarray:
    x = _flat(batch)
    if x.shape[1] != pair.input_dim:
        raise ValueError(f"batch has {x.shape[1]} features, encoder expects {pair.input_dim}")
    return predict(pair.mean_encoder(), x)


def decode(pair: AutoencoderPair, lsr_batch) -> np.ndarray:
    z = np.atleast_2d(np.asarray(lsr_batch, dtype=np.float64))
    if z.shape[1] != pair.d:
        raise ValueError(f"LSR width {z.shape[1]} != decoder input width {pair.d}")
    return np.clip(predict(pair.decoder, z), 0.0, 1.0)


def reconstruction_mse(pair: AutoencoderPair, data) -> float:
    x = _flat(data)
    return float(np.mean((decode(pair, encode(pair, x)) - x) ** 2))
