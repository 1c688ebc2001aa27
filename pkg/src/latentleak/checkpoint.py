"""Binary checkpoints for the surrogate autoencoder ("LLAE") and the crafted
global model ("LLGM").

Layout, all integers and floats little-endian::

    magic (4 bytes) | version u16 | body
    LLAE body: mode u8 | beta f64 | stack(encoder) | stack(decoder)
    LLGM body: encoder_depth u16 | stack(net)
    stack:     n_layers u16 | n_layers x (out u32, in u32, activation u8)
               | per layer: weight f64[out*in] (row-major), bias f64[out]
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .autoencoder import MODES, AutoencoderPair
from .models import GlobalModel
from .nn import ACTIVATIONS, DenseLayer, Sequential

AE_MAGIC = b"LLAE"
GM_MAGIC = b"LLGM"
VERSION = 1
_F64 = np.dtype("<f8")


def _write_stack(buf: io.BytesIO, net: Sequential) -> None:
    buf.write(struct.pack("<H", len(net)))
    for layer in net.layers:
        buf.write(struct.pack("<IIB", layer.out_features, layer.in_features,
                              ACTIVATIONS.index(layer.activation)))
    for layer in net.layers:
        buf.write(np.ascontiguousarray(layer.weight, dtype=_F64).tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype=_F64).tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=_F64).astype(np.float64)


def _read_stack(r: _Reader) -> Sequential:
    (n,) = r.unpack("<H")
    heads = [r.unpack("<IIB") for _ in range(n)]
    layers = []
    for out, inp, act in heads:
        if act >= len(ACTIVATIONS):
            raise ValueError(f"{r.path}: unknown activation code {act}")
        w = r.floats(out * inp).reshape(out, inp)
        b = r.floats(out)
        layers.append(DenseLayer(w, b, ACTIVATIONS[act]))
    return Sequential(tuple(layers))


def _open(path, magic: bytes) -> _Reader:
    r = _Reader(Path(path).read_bytes(), path)
    found = r.take(4) if len(r.raw) >= 4 else r.raw
    if found != magic:
        raise ValueError(f"{path}: bad magic {found!r}, expected {magic!r}")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    return r


def _finish(r: _Reader) -> None:
    if r.pos != len(r.raw):
        raise ValueError(f"{r.path}: {len(r.raw) - r.pos} trailing bytes")


def autoencoder_bytes(pair: AutoencoderPair) -> bytes:
    buf = io.BytesIO()
    buf.write(AE_MAGIC + struct.pack("<HBd", VERSION, MODES.index(pair.mode), pair.beta))
    _write_stack(buf, pair.encoder)
    _write_stack(buf, pair.decoder)
    return buf.getvalue()


def model_bytes(model: GlobalModel) -> bytes:
    buf = io.BytesIO()
    buf.write(GM_MAGIC + struct.pack("<HH", VERSION, model.encoder_depth))
    _write_stack(buf, model.net)
    return buf.getvalue()


def save_autoencoder(path, pair: AutoencoderPair) -> None:
    Path(path).write_bytes(autoencoder_bytes(pair))


def save_model(path, model: GlobalModel) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_autoencoder(path) -> AutoencoderPair:
    r = _open(path, AE_MAGIC)
    mode, beta = r.unpack("<Bd")
    if mode >= len(MODES):
        raise ValueError(f"{path}: unknown autoencoder mode code {mode}")
    enc = _read_stack(r)
    dec = _read_stack(r)
    _finish(r)
    return AutoencoderPair(enc, dec, MODES[mode], beta)


def load_model(path) -> GlobalModel:
    r = _open(path, GM_MAGIC)
    (depth,) = r.unpack("<H")
    net = _read_stack(r)
    _finish(r)
    return GlobalModel(net, depth)
