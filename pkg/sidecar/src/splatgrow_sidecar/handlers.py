"""Deterministic stub handlers, one per wire method.

Each handler takes the request's params dict and returns a result dict with
tensors already encoded. They are pure functions of the request content so
repeated requests get identical replies; the inpainting stubs mirror the
engine's in-process stand-in (nearest known pixel wins, ties to the smallest
row-major source).
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.spatial import cKDTree

from .wire import decode_tensor, encode_tensor


def nearest_known_fill(mask: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Copy each mask-1 pixel from its Euclidean-nearest mask-0 pixel.

    Ties break to the smallest (h, w) source, compared in exact integer
    squared distance.
    """
    missing = mask.astype(bool)
    known = np.argwhere(~missing)
    if known.shape[0] == 0:
        raise ValueError("mask covers the whole image; nothing to copy from")
    out = np.array(values, dtype=np.float64, copy=True)
    holes = np.argwhere(missing)
    if holes.shape[0] == 0:
        return out
    tree = cKDTree(known)
    dist, _ = tree.query(holes)
    candidates = tree.query_ball_point(holes, dist + 1e-6)
    for i, cand in enumerate(candidates):
        h, w = holes[i]
        best = None
        for j in cand:
            kh, kw = known[j]
            key = (int(kh - h) ** 2 + int(kw - w) ** 2, int(kh), int(kw))
            if best is None or key < best:
                best = key
        out[h, w] = out[best[1], best[2]]
    return out


def synthetic_depth(rgb: np.ndarray) -> np.ndarray:
    """Strictly positive plane-plus-luma depth, stable for a given image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = rgb.shape[:2]
    u = np.arange(w, dtype=np.float64) / max(w - 1, 1)
    v = np.arange(h, dtype=np.float64) / max(h - 1, 1)
    luma = np.clip(rgb.mean(axis=2), 0.0, 1.0)
    return 2.0 + 0.6 * u[None, :] + 0.4 * v[:, None] + 0.3 * luma


def hashed_embedding(text: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def _image_and_mask(params, key, channels):
    img = decode_tensor(params[key])
    mask = decode_tensor(params["mask"])
    if img.ndim != 3 or (channels is not None and img.shape[2] != channels):
        raise ValueError(f"{key} must be HxWx{channels or 'C'}, got {img.shape}")
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image {img.shape[:2]}")
    return img, np.round(mask).astype(np.uint8)


def handle_inpaint_rgb(params: dict) -> dict:
    rgb, mask = _image_and_mask(params, "rgb", 3)
    return {"rgb": encode_tensor(nearest_known_fill(mask, rgb))}


def handle_inpaint_sem(params: dict) -> dict:
    feat, mask = _image_and_mask(params, "feat", None)
    return {"feat": encode_tensor(nearest_known_fill(mask, feat))}


def handle_depth(params: dict) -> dict:
    rgb = decode_tensor(params["rgb"])
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be HxWx3, got {rgb.shape}")
    return {"depth": encode_tensor(synthetic_depth(rgb))}


def handle_embed_text(params: dict) -> dict:
    text = params["text"]
    dim = params["dim"]
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ValueError("dim must be a positive integer")
    return {"vector": encode_tensor(hashed_embedding(text, dim))}


def handle_fid(params: dict) -> dict:
    # unavailable in the stub; the sentinel tells callers not to report it
    return {"fid": -1.0}


def default_handlers() -> dict:
    return {
        "inpaint_rgb": handle_inpaint_rgb,
        "inpaint_sem": handle_inpaint_sem,
        "depth": handle_depth,
        "embed_text": handle_embed_text,
        "fid": handle_fid,
    }
