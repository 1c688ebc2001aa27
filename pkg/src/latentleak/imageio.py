"""Binary PGM/PPM writer and reader plus a grid montage helper."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def _to_hwc(image) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"image must be (h, w), (h, w, 1) or (h, w, 3), got {a.shape}")
    return a


def write_image(path, image) -> None:
    """Grayscale -> P5, RGB -> P6, maxval 255, nearest rounding."""
    a = _to_hwc(image)
    if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
        raise ValueError("pixels must lie in [0, 1]")
    h, w, c = a.shape
    payload = np.rint(a * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload.tobytes())


def read_image(path) -> np.ndarray:
    """Parse a binary P5/P6 file back to (h, w, c) floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"{path}: unsupported PNM variant {magic!r} maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * c, offset=pos)
    return data.reshape(h, w, c).astype(np.float64) / 255.0


def montage(images, cols: int | None = None, separator: float = 1.0) -> np.ndarray:
    """Tile images row-major with 1-pixel separators."""
    imgs = [_to_hwc(im) for im in images]
    if not imgs:
        raise ValueError("montage of zero images")
    h, w, c = imgs[0].shape
    m = len(imgs)
    cols = cols or math.ceil(math.sqrt(m))
    rows = math.ceil(m / cols)
    canvas = np.full((rows * h + rows - 1, cols * w + cols - 1, c), separator)
    for i, im in enumerate(imgs):
        r, q = divmod(i, cols)
        canvas[r * (h + 1): r * (h + 1) + h, q * (w + 1): q * (w + 1) + w] = im
    return canvas
