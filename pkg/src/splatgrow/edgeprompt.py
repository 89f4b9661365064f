"""Edge translator: read the semantics sitting on the boundary of an
inpainting region and phrase them as a text prompt.

The boundary band is the known-region side of the mask border (Chebyshev
distance <= band_width, i.e. repeated 8-connected dilation). Each band pixel
is classified against the category bank; categories with enough votes make
it into the prompt, most frequent first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .codec import CategoryBank, SemanticCodec, _bank_cosines, decode
from .errors import NoBoundary, RangeError, ShapeMismatch
from .gaussians import SEM_DIM
from .renderer import InpaintMask

DEFAULT_BAND_WIDTH = 3
DEFAULT_MAX_CATEGORIES = 8
DEFAULT_MIN_PIXEL_FRACTION = 0.005     # of the band size


@dataclass(frozen=True)
class EdgeBand:
    pixels: np.ndarray       # (m, 2) int rows of (h, w), row-major order
    band_width: int


def extract_edge(mask: InpaintMask, band_width: int = DEFAULT_BAND_WIDTH) -> EdgeBand:
    """Known-region pixels within band_width of the masked region."""
    if band_width < 1:
        raise RangeError(f"band_width must be >= 1, got {band_width}")
    m = np.asarray(mask.m).astype(bool)
    if m.all() or not m.any():
        raise NoBoundary("mask is constant; no boundary to read")
    grown = ndimage.binary_dilation(m, structure=np.ones((3, 3), dtype=bool),
                                    iterations=band_width)
    band = grown & ~m
    return EdgeBand(pixels=np.argwhere(band), band_width=int(band_width))


def edge_categories(band: EdgeBand, feat: np.ndarray, codec: SemanticCodec,
                    bank: CategoryBank, min_pixels: Optional[float] = None,
                    max_categories: int = DEFAULT_MAX_CATEGORIES) -> list:
    """Vote-ranked category names along the band.

    Every band pixel with a nonzero feature is classified by argmax cosine;
    categories keep their spot when they collect at least min_pixels votes
    (default 0.5% of the band). Ties in the ranking fall back to bank order.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 3 or feat.shape[2] != SEM_DIM:
        raise ShapeMismatch(f"feature map must be HxWx{SEM_DIM}, got {feat.shape}")
    pix = band.pixels
    if pix.size == 0:
        raise RangeError("band is empty")
    if min_pixels is None:
        min_pixels = DEFAULT_MIN_PIXEL_FRACTION * pix.shape[0]

    f = feat[pix[:, 0], pix[:, 1]]
    nonzero = np.linalg.norm(f, axis=1) >= 1e-12
    if not nonzero.any():
        return []
    g = decode(codec, f[nonzero])
    winners = np.argmax(_bank_cosines(g, bank), axis=1)

    counts = np.bincount(winners, minlength=len(bank))
    ranked = sorted((i for i in range(len(bank)) if counts[i] >= min_pixels),
                    key=lambda i: (-counts[i], i))
    return [bank.names[i] for i in ranked[:max_categories]]


def build_prompt(categories: Sequence[str]) -> str:
    """Render the category list as the inpainting prompt."""
    cats = list(categories)
    if not cats:
        return "a room"
    if len(cats) == 1:
        return f"a room with {cats[0]}"
    if len(cats) == 2:
        return f"a room with {cats[0]} and {cats[1]}"
    return "a room with " + ", ".join(cats[:-1]) + f", and {cats[-1]}"
