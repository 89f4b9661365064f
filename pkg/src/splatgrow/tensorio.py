"""Raw image-tensor files and PNG output.

Tensor format: magic ``OGT1``, u32 height, u32 width, u32 channels, then
little-endian float32 in C order. PNGs are for human inspection only and
carry sRGB-encoded RGB.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

MAGIC = b"OGT1"
_HEADER = struct.Struct("<4sIII")


def save_tensor(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"tensor must be HxW or HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * h * w * c:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {4 * h * w * c}")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    lo = 12.92 * x
    hi = 1.055 * np.power(x, 1.0 / 2.4) - 0.055
    return np.where(x <= 0.0031308, lo, hi)


def save_png(rgb: np.ndarray, path) -> None:
    """sRGB-encode a linear HxWx3 map in [0,1] and write an 8-bit PNG."""
    srgb = np.round(linear_to_srgb(rgb) * 255.0).astype(np.uint8)
    Image.fromarray(srgb, mode="RGB").save(path)


def save_gray_png(gray: np.ndarray, path) -> None:
    """Write an HxW map in [0,1] as an 8-bit grayscale PNG (no transfer curve)."""
    g = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(g, mode="L").save(path)


def save_label_png(labels: np.ndarray, path) -> None:
    """Integer HxW label map as a single-channel PNG (8- or 16-bit)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be HxW, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 65535:
        raise FormatError("label ids must fit in uint16")
    if labels.max() <= 255:
        Image.fromarray(labels.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(labels.astype(np.int32), mode="I").save(path)


def load_label_map(path) -> np.ndarray:
    """Integer label map from PNG (L / I / I;16) or an OGT tensor."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        img = Image.open(path)
        arr = np.asarray(img)
        if arr.ndim != 2:
            raise FormatError(f"{path}: label PNG must be single-channel")
        return arr.astype(np.int64)
    arr = load_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: label tensor must have 1 channel")
    return np.round(arr).astype(np.int64)
