"""Datasets: IDX and CSV ingestion, a synthetic-shapes generator, class filters."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import STREAM_DATA, SeededRng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images of shape (n, height, width, channels) in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        if imgs.ndim == 3:
            imgs = imgs[..., None]
        if imgs.ndim != 4:
            raise ValueError(f"images must be (n, h, w, c), got {imgs.shape}")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != imgs.shape[0]:
            raise ValueError(f"{imgs.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.shape))

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


# --- IDX -------------------------------------------------------------------

def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated file (no header)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated file (incomplete dimension header)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise ValueError(f"{path}: truncated file ({len(raw) - header} of {size} data bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    """Write unsigned-byte data in IDX format (images: 3-D, labels: 1-D)."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("IDX writer only supports uint8 data")
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    n_cls = num_classes if num_classes is not None else int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), n_cls)


# --- CSV -------------------------------------------------------------------

def load_csv(path, height: int, width: int, channels: int = 1,
             num_classes: int | None = None) -> Dataset:
    """Rows of ``label, v_1 .. v_{h*w*c}``; 0..255 data is detected (max > 1.5) and scaled."""
    n_vals = height * width * channels
    labels, rows = [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_vals + 1:
                raise ValueError(f"{path}:{lineno}: expected {n_vals + 1} cells, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(c) for c in row[1:]])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-numeric cell ({e})") from None
    vals = np.array(rows, dtype=np.float64).reshape(-1, height, width, channels)
    if vals.size and vals.max() > 1.5:
        vals = vals / 255.0
    lab = np.array(labels, dtype=np.int64)
    n_cls = num_classes if num_classes is not None else int(lab.max()) + 1 if lab.size else 1
    return Dataset(vals, lab, n_cls)


# --- synthetic shapes -------------------------------------------------------

SHAPE_NAMES = ("hbar", "vbar", "square", "disc", "cross",
               "ring", "triangle", "diagonal", "frame", "saltire")


def _box(u, v, bu, bv):
    qu, qv = np.abs(u) - bu, np.abs(v) - bv
    outside = np.hypot(np.maximum(qu, 0), np.maximum(qv, 0))
    return outside + np.minimum(np.maximum(qu, qv), 0)


def _shape_sdf(kind: int, u, v, s):
    r = np.hypot(u, v)
    if kind == 0:
        return _box(u, v, s, 0.3 * s)
    if kind == 1:
        return _box(u, v, 0.3 * s, s)
    if kind == 2:
        return _box(u, v, 0.75 * s, 0.75 * s)
    if kind == 3:
        return r - 0.85 * s
    if kind == 4:
        return np.minimum(_box(u, v, s, 0.25 * s), _box(u, v, 0.25 * s, s))
    if kind == 5:
        return np.abs(r - 0.75 * s) - 0.22 * s
    if kind == 6:
        # upward triangle as the intersection of three half-planes
        c = np.sqrt(3) / 2
        return np.maximum.reduce([v - 0.5 * s, -c * u - 0.5 * v - 0.5 * s, c * u - 0.5 * v - 0.5 * s])
    if kind == 7:
        return np.maximum(np.abs(u - v) / np.sqrt(2) - 0.25 * s, _box(u, v, s, s))
    if kind == 8:
        return np.abs(_box(u, v, 0.75 * s, 0.75 * s)) - 0.2 * s
    return np.maximum(np.minimum(np.abs(u - v), np.abs(u + v)) / np.sqrt(2) - 0.22 * s,
                      _box(u, v, s, s))


def synth_shapes(n: int, size: int = 16, classes: int = 10, seed: int = 0) -> Dataset:
    """Grayscale canvases with one soft-edged shape per image.

    Class ``c`` draws shape ``SHAPE_NAMES[c]`` at a random centre, scale and
    intensity over a random dim background.
    """
    if size < 8:
        raise ValueError("size must be >= 8")
    if not 2 <= classes <= 10:
        raise ValueError(f"unsupported class count {classes}: need 2..10")
    gen = SeededRng(seed).child(STREAM_DATA).generator()
    labels = gen.integers(0, classes, size=n)
    cx = gen.uniform(0.35, 0.65, size=n) * (size - 1)
    cy = gen.uniform(0.35, 0.65, size=n) * (size - 1)
    scale = gen.uniform(0.2, 0.32, size=n) * size
    fg = gen.uniform(0.6, 1.0, size=n)
    bg = gen.uniform(0.0, 0.2, size=n)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, size, size, 1))
    for i in range(n):
        sdf = _shape_sdf(int(labels[i]), xx - cx[i], cy[i] - yy, scale[i])
        # soft edge about one pixel wide
        mask = 1.0 / (1.0 + np.exp(np.clip(2.5 * sdf, -50, 50)))
        images[i, :, :, 0] = bg[i] + (fg[i] - bg[i]) * mask
    return Dataset(np.clip(images, 0.0, 1.0), labels, classes)


def filter_classes(dataset: Dataset, keep, max_per_class: int | None = None) -> Dataset:
    keep = {int(c) for c in keep}
    if not keep:
        raise ValueError("keep must name at least one class")
    present = set(np.unique(dataset.labels).tolist())
    if not keep & present:
        raise ValueError(f"none of the classes {sorted(keep)} are present")
    taken: dict[int, int] = {}
    idx = []
    for i, y in enumerate(dataset.labels.tolist()):
        if y not in keep:
            continue
        if max_per_class is not None and taken.get(y, 0) >= max_per_class:
            continue
        taken[y] = taken.get(y, 0) + 1
        idx.append(i)
    return dataset.subset(idx)
