"""Compiled rasterization inner loops.

All kernels receive per-Gaussian arrays already sorted front-to-back by
camera depth, so each pixel's candidate list comes out depth-ordered for
free. Everything runs in float64 with fastmath off: the forward pass
parallelizes over tiles where every output element is written by exactly
one iteration, which makes results byte-identical for any tile size or
thread count. The backward pass stays serial because it accumulates into
shared per-Gaussian sums.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def build_pixel_lists(rects, height, width):
    """Per-pixel candidate lists from clipped integer bounding rects.

    rects: (n, 4) int64 rows [x0, x1, y0, y1), depth-ordered. Returns
    (offsets, entries): pixel p's candidates are entries[offsets[p]:offsets[p+1]],
    still depth-ordered.
    """
    n = rects.shape[0]
    npix = height * width
    counts = np.zeros(npix + 1, dtype=np.int64)
    for i in range(n):
        x0, x1, y0, y1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        for y in range(y0, y1):
            row = y * width
            for x in range(x0, x1):
                counts[row + x + 1] += 1
    offsets = np.cumsum(counts)
    entries = np.empty(offsets[npix], dtype=np.int64)
    cursor = offsets[:npix].copy()
    for i in range(n):
        x0, x1, y0, y1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        for y in range(y0, y1):
            row = y * width
            for x in range(x0, x1):
                pix = row + x
                entries[cursor[pix]] = i
                cursor[pix] += 1
    return offsets, entries


@njit(cache=True, parallel=True)
def forward_blend(offsets, entries, means2d, conics, alphas, colors, feats,
                  depths, bg, height, width, tile, alpha_clamp, min_alpha,
                  tmin, rgb, feat, acc, depth_map, n_contrib, consumed,
                  t_final):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    nfeat = feats.shape[1]
    for ti in prange(tiles_x * tiles_y):
        ty = ti // tiles_x
        tx = ti - ty * tiles_x
        ylo = ty * tile
        yhi = min(height, ylo + tile)
        xlo = tx * tile
        xhi = min(width, xlo + tile)
        for py in range(ylo, yhi):
            for px in range(xlo, xhi):
                pix = py * width + px
                fpx = float(px)
                fpy = float(py)
                T = 1.0
                n_acc = 0
                used = 0
                for j in range(offsets[pix], offsets[pix + 1]):
                    if T < tmin:
                        break
                    used += 1
                    g = entries[j]
                    dx = fpx - means2d[g, 0]
                    dy = fpy - means2d[g, 1]
                    ca = conics[g, 0]
                    cb = conics[g, 1]
                    cc = conics[g, 2]
                    sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                    if sigma < 0.0:
                        continue
                    ahat = alphas[g] * math.exp(-sigma)
                    if ahat > alpha_clamp:
                        ahat = alpha_clamp
                    if ahat < min_alpha:
                        continue
                    w = ahat * T
                    rgb[py, px, 0] += w * colors[g, 0]
                    rgb[py, px, 1] += w * colors[g, 1]
                    rgb[py, px, 2] += w * colors[g, 2]
                    for k in range(nfeat):
                        feat[py, px, k] += w * feats[g, k]
                    acc[py, px] += w
                    depth_map[py, px] += w * depths[g]
                    T *= 1.0 - ahat
                    n_acc += 1
                rgb[py, px, 0] += T * bg[0]
                rgb[py, px, 1] += T * bg[1]
                rgb[py, px, 2] += T * bg[2]
                n_contrib[py, px] = n_acc
                consumed[py, px] = used
                t_final[py, px] = T


@njit(cache=True)
def backward_blend(offsets, entries, means2d, conics, alphas, colors, feats,
                   depths, bg, height, width, alpha_clamp, min_alpha,
                   consumed, t_final, dL_drgb, dL_dfeat, dL_dacc, dL_ddepth,
                   gmeans2d, gconics, galphas, gcolors, gfeats, gdepths):
    """Gradients w.r.t. splatted 2D quantities, accumulated per Gaussian.

    Walks each pixel's processed contributors back-to-front, rebuilding the
    incoming transmittance by division and keeping suffix sums of the
    quantities accumulated behind the current contributor. A contributor
    sitting at the opacity clamp gets no alpha/shape gradient (the clamp is
    locally flat) but still routes color/feature/depth gradients.
    """
    nfeat = feats.shape[1]
    suff_f = np.zeros(nfeat, dtype=np.float64)
    for py in range(height):
        for px in range(width):
            pix = py * width + px
            used = consumed[py, px]
            if used == 0:
                continue
            start = offsets[pix]
            fpx = float(px)
            fpy = float(py)
            T = t_final[py, px]
            suff_c0 = T * bg[0]
            suff_c1 = T * bg[1]
            suff_c2 = T * bg[2]
            for k in range(nfeat):
                suff_f[k] = 0.0
            suff_a = 0.0
            suff_d = 0.0
            gr0 = dL_drgb[py, px, 0]
            gr1 = dL_drgb[py, px, 1]
            gr2 = dL_drgb[py, px, 2]
            ga = dL_dacc[py, px]
            gd = dL_ddepth[py, px]
            for j in range(start + used - 1, start - 1, -1):
                g = entries[j]
                dx = fpx - means2d[g, 0]
                dy = fpy - means2d[g, 1]
                ca = conics[g, 0]
                cb = conics[g, 1]
                cc = conics[g, 2]
                sigma = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                if sigma < 0.0:
                    continue
                gauss = math.exp(-sigma)
                araw = alphas[g] * gauss
                clamped = araw > alpha_clamp
                ahat = alpha_clamp if clamped else araw
                if ahat < min_alpha:
                    continue
                om = 1.0 - ahat
                T = T / om
                w = ahat * T
                gcolors[g, 0] += w * gr0
                gcolors[g, 1] += w * gr1
                gcolors[g, 2] += w * gr2
                gdepths[g] += w * gd
                dL_dahat = (gr0 * (colors[g, 0] * T - suff_c0 / om)
                            + gr1 * (colors[g, 1] * T - suff_c1 / om)
                            + gr2 * (colors[g, 2] * T - suff_c2 / om)
                            + ga * (T - suff_a / om)
                            + gd * (depths[g] * T - suff_d / om))
                for k in range(nfeat):
                    gf = dL_dfeat[py, px, k]
                    gfeats[g, k] += w * gf
                    dL_dahat += gf * (feats[g, k] * T - suff_f[k] / om)
                suff_c0 += colors[g, 0] * w
                suff_c1 += colors[g, 1] * w
                suff_c2 += colors[g, 2] * w
                for k in range(nfeat):
                    suff_f[k] += feats[g, k] * w
                suff_a += w
                suff_d += depths[g] * w
                if clamped:
                    continue
                dL_dsigma = -araw * dL_dahat
                galphas[g] += gauss * dL_dahat
                gconics[g, 0] += dL_dsigma * 0.5 * dx * dx
                gconics[g, 1] += dL_dsigma * dx * dy
                gconics[g, 2] += dL_dsigma * 0.5 * dy * dy
                gmeans2d[g, 0] -= dL_dsigma * (ca * dx + cb * dy)
                gmeans2d[g, 1] -= dL_dsigma * (cc * dy + cb * dx)
