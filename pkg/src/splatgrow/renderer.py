"""Forward rasterization of Gaussian scenes and the matching analytic backward pass.

Projection follows standard EWA splatting: a Gaussian's world covariance is
pushed through the pose rotation and the perspective Jacobian at its center,
plus a small isotropic low-pass term in pixel space. Blending composites
front-to-back per pixel:

    rgb   = sum c_i a_i T_i + T_final * background
    feat  = sum f_i a_i T_i            (no background, no normalization)
    A     = sum a_i T_i
    depth = sum z_i a_i T_i

with a_i the effective alpha (clamped to <= 0.99) and T_i the transmittance
accumulated in front of contributor i. Blending stops once T < 1e-4.

Outputs are byte-identical for any tile size or worker count: the depth sort
is global and stable, and every pixel is written by exactly one task.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from . import _kernels
from .cameras import Camera
from .errors import BadThreshold, BehindCamera, EmptyScene, RangeError
from .gaussians import SEM_DIM, Gaussian, GaussianScene, quat_to_rotmat
from .sh import sh_color_backward, sh_to_color


@dataclass(frozen=True)
class RenderSettings:
    """Rasterizer knobs. The defaults are the contract; only change them
    when a caller genuinely needs to (tests, debugging)."""

    tile_size: int = 16
    workers: Optional[int] = None           # None = numba's current setting
    background: Sequence[float] = (0.0, 0.0, 0.0)
    near: float = 0.01
    alpha_clamp: float = 0.99
    min_alpha: float = 1.0 / 255.0
    tmin: float = 1e-4
    lowpass: float = 0.3                    # px^2, added to cov2d diagonal

    def __post_init__(self):
        if self.tile_size < 1:
            raise RangeError(f"tile_size must be >= 1, got {self.tile_size}")
        if not (self.near > 0):
            raise RangeError(f"near plane must be positive, got {self.near}")
        if not (0 < self.alpha_clamp < 1):
            raise RangeError(f"alpha_clamp must be in (0,1), got {self.alpha_clamp}")
        if not (0 <= self.min_alpha < 1):
            raise RangeError(f"min_alpha must be in [0,1), got {self.min_alpha}")
        if not (0 < self.tmin < 1):
            raise RangeError(f"tmin must be in (0,1), got {self.tmin}")
        if self.lowpass < 0:
            raise RangeError(f"lowpass must be >= 0, got {self.lowpass}")
        bg = np.asarray(self.background, dtype=np.float64).reshape(-1)
        if bg.shape != (3,) or not np.all(np.isfinite(bg)):
            raise RangeError("background must be 3 finite floats")


@dataclass(repr=False)
class RenderOutput:
    rgb: np.ndarray           # (H, W, 3) linear [0, 1]
    feat: np.ndarray          # (H, W, 16) blended semantic features
    acc_opacity: np.ndarray   # (H, W) accumulated opacity A
    depth: np.ndarray         # (H, W) alpha-blended camera depth, 0 where A = 0
    n_contrib: np.ndarray     # (H, W) int32, Gaussians blended per pixel
    cache: Optional[SimpleNamespace] = None   # backward-pass intermediates

    def __repr__(self):
        h, w = self.acc_opacity.shape
        return f"RenderOutput({h}x{w}, cached={self.cache is not None})"


@dataclass(frozen=True)
class InpaintMask:
    """Binary map marking pixels whose accumulated opacity fell below tau."""

    m: np.ndarray
    tau: float


class ProjectedGaussian(NamedTuple):
    mean2d: np.ndarray   # (2,) pixel coordinates
    cov2d: np.ndarray    # (2, 2) pixel covariance, low-pass included
    depth: float         # camera-frame z


def compute_mask(out: RenderOutput, tau: float) -> InpaintMask:
    if not (0.0 < tau < 1.0):
        raise BadThreshold(f"tau must be in (0,1), got {tau}")
    return InpaintMask(m=(out.acc_opacity < tau).astype(np.uint8), tau=float(tau))


def _perspective_jacobian_terms(t_cam, cam):
    """Clamped camera-frame xy used by the EWA Jacobian, plus clamp flags.

    Points far outside the frustum get their xy/z ratio clamped before the
    Jacobian is built (standard guard against absurd stretching); the 2D
    mean always uses the unclamped projection.
    """
    tz = t_cam[..., 2]
    limx = 1.3 * cam.width / (2.0 * cam.fx)
    limy = 1.3 * cam.height / (2.0 * cam.fy)
    txz = t_cam[..., 0] / tz
    tyz = t_cam[..., 1] / tz
    x_clamped = np.abs(txz) > limx
    y_clamped = np.abs(tyz) > limy
    tx_c = np.clip(txz, -limx, limx) * tz
    ty_c = np.clip(tyz, -limy, limy) * tz
    return tx_c, ty_c, x_clamped, y_clamped


def project_gaussian(g: Gaussian, cam: Camera,
                     settings: Optional[RenderSettings] = None) -> ProjectedGaussian:
    """EWA projection of a single primitive; raises BehindCamera at or
    behind the near plane."""
    settings = settings or RenderSettings()
    t_cam = cam.R @ g.center() + cam.t
    if t_cam[2] <= settings.near:
        raise BehindCamera(f"center depth {t_cam[2]:.4g} <= near plane {settings.near}")
    tx_c, ty_c, _, _ = _perspective_jacobian_terms(t_cam[None, :], cam)
    tz = t_cam[2]
    J = np.array([
        [cam.fx / tz, 0.0, -cam.fx * tx_c[0] / tz ** 2],
        [0.0, cam.fy / tz, -cam.fy * ty_c[0] / tz ** 2],
    ])
    M = J @ cam.R
    cov2d = M @ g.covariance() @ M.T + settings.lowpass * np.eye(2)
    mean2d = np.array([cam.cx + cam.fx * t_cam[0] / tz,
                       cam.cy + cam.fy * t_cam[1] / tz])
    return ProjectedGaussian(mean2d=mean2d, cov2d=cov2d, depth=float(tz))


def _preprocess(scene: GaussianScene, cam: Camera,
                settings: RenderSettings) -> SimpleNamespace:
    """Project every Gaussian, cull, sort by depth, and stash all
    intermediates the backward chain reuses. Arrays in the returned cache
    are restricted to visible Gaussians in front-to-back order; `order`
    maps them back to scene indices."""
    R = cam.R
    p_world = scene.p + scene.p_delta
    t_cam = p_world @ R.T + cam.t
    tz = t_cam[:, 2]
    valid = tz > settings.near
    tz_safe = np.where(valid, tz, 1.0)
    t_use = t_cam.copy()
    t_use[:, 2] = tz_safe

    qnorm = np.linalg.norm(scene.q, axis=1)
    qn = scene.q / qnorm[:, None]
    R_q = quat_to_rotmat(qn)
    M_s = R_q * scene.s[:, None, :]
    Sigma = M_s @ np.swapaxes(M_s, 1, 2)

    tx_c, ty_c, x_clamped, y_clamped = _perspective_jacobian_terms(t_use, cam)
    inv_tz = 1.0 / tz_safe
    inv_tz2 = inv_tz * inv_tz
    J00 = cam.fx * inv_tz
    J02 = -cam.fx * tx_c * inv_tz2
    J11 = cam.fy * inv_tz
    J12 = -cam.fy * ty_c * inv_tz2
    M = np.empty((scene.n, 2, 3), dtype=np.float64)
    M[:, 0, :] = J00[:, None] * R[0] + J02[:, None] * R[2]
    M[:, 1, :] = J11[:, None] * R[1] + J12[:, None] * R[2]

    cov = np.einsum("nij,njk,nlk->nil", M, Sigma, M)
    cov_a = cov[:, 0, 0] + settings.lowpass
    cov_b = cov[:, 0, 1]
    cov_c = cov[:, 1, 1] + settings.lowpass
    det = cov_a * cov_c - cov_b * cov_b
    valid &= det > 0.0
    det_safe = np.where(det > 0.0, det, 1.0)
    conics = np.stack([cov_c / det_safe, -cov_b / det_safe, cov_a / det_safe],
                      axis=1)

    means2d = np.stack([cam.cx + cam.fx * t_cam[:, 0] * inv_tz,
                        cam.cy + cam.fy * t_cam[:, 1] * inv_tz], axis=1)
    mid = 0.5 * (cov_a + cov_c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det_safe, 0.0))
    radius = np.ceil(3.0 * np.sqrt(np.maximum(lam_max, 0.0)))

    x0 = np.maximum(np.ceil(means2d[:, 0] - radius), 0.0)
    x1 = np.minimum(np.floor(means2d[:, 0] + radius) + 1.0, cam.width)
    y0 = np.maximum(np.ceil(means2d[:, 1] - radius), 0.0)
    y1 = np.minimum(np.floor(means2d[:, 1] + radius) + 1.0, cam.height)
    valid &= (x0 < x1) & (y0 < y1)

    v = p_world - cam.center
    vnorm = np.linalg.norm(v, axis=1)
    dirs = v / np.where(vnorm > 1e-12, vnorm, 1.0)[:, None]
    dirs[vnorm <= 1e-12] = (0.0, 0.0, 1.0)
    colors, raw_sh = sh_to_color(scene.sh, dirs)

    # global stable depth sort; ties resolved by primitive index
    order = np.argsort(tz, kind="stable")
    order = order[valid[order]]

    rects = np.zeros((order.size, 4), dtype=np.int64)
    rects[:, 0] = x0[order]
    rects[:, 1] = x1[order]
    rects[:, 2] = y0[order]
    rects[:, 3] = y1[order]

    def sel(arr):
        return np.ascontiguousarray(arr[order])

    return SimpleNamespace(
        cam=cam, settings=settings, n_full=scene.n, d_color=scene.d_color,
        order=order, rects=rects,
        t_cam=sel(t_cam), tx_c=sel(tx_c), ty_c=sel(ty_c),
        x_clamped=sel(x_clamped), y_clamped=sel(y_clamped),
        qn=sel(qn), qnorm=sel(qnorm), R_q=sel(R_q), M_s=sel(M_s),
        Sigma=sel(Sigma), M=sel(M),
        cov_a=sel(cov_a), cov_b=sel(cov_b), cov_c=sel(cov_c),
        means2d=sel(means2d), conics=sel(conics),
        s=sel(scene.s), sh=sel(scene.sh), alphas=sel(scene.alpha),
        colors=sel(colors), feats=sel(scene.f),
        dirs=sel(dirs), vnorm=sel(vnorm), raw_sh=sel(raw_sh),
        offsets=None, entries=None, consumed=None, t_final=None,
    )


def _resolve_threads(workers: Optional[int]) -> int:
    if workers is None:
        return numba.get_num_threads()
    return max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))


def render(scene: GaussianScene, cam: Camera,
           settings: Optional[RenderSettings] = None, *,
           with_cache: bool = False) -> RenderOutput:
    """Rasterize a scene into RGB, feature, opacity, and depth maps.

    Pass with_cache=True when a backward pass will follow; the returned
    output then carries the projection intermediates render_backward needs.
    """
    settings = settings or RenderSettings()
    if scene.n == 0:
        raise EmptyScene("cannot render an empty scene")
    cache = _preprocess(scene, cam, settings)
    h, w = cam.height, cam.width
    offsets, entries = _kernels.build_pixel_lists(cache.rects, h, w)

    rgb = np.zeros((h, w, 3), dtype=np.float64)
    feat = np.zeros((h, w, SEM_DIM), dtype=np.float64)
    acc = np.zeros((h, w), dtype=np.float64)
    depth = np.zeros((h, w), dtype=np.float64)
    n_contrib = np.zeros((h, w), dtype=np.int32)
    consumed = np.zeros((h, w), dtype=np.int64)
    t_final = np.ones((h, w), dtype=np.float64)
    bg = np.asarray(settings.background, dtype=np.float64).reshape(3)

    depths = np.ascontiguousarray(cache.t_cam[:, 2])
    old_threads = numba.get_num_threads()
    numba.set_num_threads(_resolve_threads(settings.workers))
    try:
        _kernels.forward_blend(
            offsets, entries, cache.means2d, cache.conics, cache.alphas,
            cache.colors, cache.feats, depths, bg, h, w, settings.tile_size,
            settings.alpha_clamp, settings.min_alpha, settings.tmin,
            rgb, feat, acc, depth, n_contrib, consumed, t_final)
    finally:
        numba.set_num_threads(old_threads)

    cache.offsets = offsets
    cache.entries = entries
    cache.consumed = consumed
    cache.t_final = t_final
    return RenderOutput(rgb=rgb, feat=feat, acc_opacity=acc, depth=depth,
                        n_contrib=n_contrib,
                        cache=cache if with_cache else None)


def render_backward(out: RenderOutput,
                    dL_drgb: Optional[np.ndarray] = None,
                    dL_dfeat: Optional[np.ndarray] = None,
                    dL_dacc: Optional[np.ndarray] = None,
                    dL_ddepth: Optional[np.ndarray] = None) -> dict:
    """Chain pixel-space loss gradients back to per-Gaussian parameters.

    Returns a dict of arrays aligned with the rendered scene: p_delta (3),
    q (4, projected through unit normalization), s (3), alpha, sh (3 x d),
    f (16). All are gradients w.r.t. the stored (activated) values; culled
    Gaussians get zeros.
    """
    cache = out.cache
    if cache is None:
        raise RangeError("render_backward needs a render(..., with_cache=True) output")
    cam, settings = cache.cam, cache.settings
    h, w = cam.height, cam.width
    m = cache.order.size
    bg = np.asarray(settings.background, dtype=np.float64).reshape(3)

    def up(g, shape):
        if g is None:
            return np.zeros(shape, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != shape:
            raise RangeError(f"upstream gradient shape {g.shape} != {shape}")
        return np.ascontiguousarray(g)

    dL_drgb = up(dL_drgb, (h, w, 3))
    dL_dfeat = up(dL_dfeat, (h, w, SEM_DIM))
    dL_dacc = up(dL_dacc, (h, w))
    dL_ddepth = up(dL_ddepth, (h, w))

    g2d = np.zeros((m, 2), dtype=np.float64)
    gcon = np.zeros((m, 3), dtype=np.float64)
    galpha = np.zeros(m, dtype=np.float64)
    gcolor = np.zeros((m, 3), dtype=np.float64)
    gfeat = np.zeros((m, SEM_DIM), dtype=np.float64)
    gdepth = np.zeros(m, dtype=np.float64)
    if m:
        depths = np.ascontiguousarray(cache.t_cam[:, 2])
        _kernels.backward_blend(
            cache.offsets, cache.entries, cache.means2d, cache.conics,
            cache.alphas, cache.colors, cache.feats, depths, bg, h, w,
            settings.alpha_clamp, settings.min_alpha, cache.consumed,
            cache.t_final, dL_drgb, dL_dfeat, dL_dacc, dL_ddepth,
            g2d, gcon, galpha, gcolor, gfeat, gdepth)

    # conic -> 2D covariance entries (a, b, c)
    a, b, c = cache.cov_a, cache.cov_b, cache.cov_c
    det = a * c - b * b
    det2inv = 1.0 / (det * det)
    gA, gB, gC = gcon[:, 0], gcon[:, 1], gcon[:, 2]
    dL_da = (-c * c * gA + b * c * gB - b * b * gC) * det2inv
    dL_db = (2.0 * b * c * gA - (a * c + b * b) * gB + 2.0 * a * b * gC) * det2inv
    dL_dc = (-b * b * gA + a * b * gB - a * a * gC) * det2inv

    Gm = np.empty((m, 2, 2), dtype=np.float64)
    Gm[:, 0, 0] = dL_da
    Gm[:, 0, 1] = 0.5 * dL_db
    Gm[:, 1, 0] = 0.5 * dL_db
    Gm[:, 1, 1] = dL_dc

    # cov2d = M Sigma M^T (+ lowpass)
    dSigma = np.einsum("nji,njk,nkl->nil", cache.M, Gm, cache.M)
    dM = 2.0 * np.einsum("nij,njk,nkl->nil", Gm, cache.M, cache.Sigma)

    # M = J @ cam.R; only four J entries are structurally nonzero
    R = cam.R
    dJ00 = dM[:, 0, :] @ R[0]
    dJ02 = dM[:, 0, :] @ R[2]
    dJ11 = dM[:, 1, :] @ R[1]
    dJ12 = dM[:, 1, :] @ R[2]

    tx = cache.t_cam[:, 0]
    ty = cache.t_cam[:, 1]
    tz = cache.t_cam[:, 2]
    inv_tz = 1.0 / tz
    inv_tz2 = inv_tz * inv_tz
    inv_tz3 = inv_tz2 * inv_tz
    fx, fy = cam.fx, cam.fy
    x_mul = np.where(cache.x_clamped, 0.0, 1.0)
    y_mul = np.where(cache.y_clamped, 0.0, 1.0)
    # d/dtz of -f*t_c/tz^2 keeps one power of tz when the ratio is clamped
    fac_x = 2.0 - (1.0 - x_mul)
    fac_y = 2.0 - (1.0 - y_mul)

    dt = np.empty((m, 3), dtype=np.float64)
    dt[:, 0] = x_mul * (-fx * inv_tz2) * dJ02 + g2d[:, 0] * fx * inv_tz
    dt[:, 1] = y_mul * (-fy * inv_tz2) * dJ12 + g2d[:, 1] * fy * inv_tz
    dt[:, 2] = (-fx * inv_tz2 * dJ00 - fy * inv_tz2 * dJ11
                + fac_x * fx * cache.tx_c * inv_tz3 * dJ02
                + fac_y * fy * cache.ty_c * inv_tz3 * dJ12
                - g2d[:, 0] * fx * tx * inv_tz2
                - g2d[:, 1] * fy * ty * inv_tz2
                + gdepth)
    dp_world = dt @ R

    # colors -> SH coefficients and (for degree > 0) the view direction
    dsh, ddirs = sh_color_backward(cache.sh, cache.dirs, cache.raw_sh, gcolor)
    if cache.d_color > 1:
        proj = ddirs - cache.dirs * np.sum(cache.dirs * ddirs, axis=1, keepdims=True)
        safe = np.where(cache.vnorm > 1e-12, cache.vnorm, 1.0)
        dv = proj / safe[:, None]
        dv[cache.vnorm <= 1e-12] = 0.0
        dp_world = dp_world + dv

    # Sigma = M_s M_s^T with M_s = R_q diag(s)
    dM_s = 2.0 * np.einsum("nij,njk->nik", dSigma, cache.M_s)
    ds = np.einsum("nik,nik->nk", cache.R_q, dM_s)
    dR_q = dM_s * cache.s[:, None, :]
    dq_unit = np.einsum("nij,nkij->nk", dR_q, _rotmat_quat_grad(cache.qn))
    dq = (dq_unit - cache.qn * np.sum(cache.qn * dq_unit, axis=1, keepdims=True))
    dq /= cache.qnorm[:, None]

    n = cache.n_full
    grads = {
        "p_delta": np.zeros((n, 3), dtype=np.float64),
        "q": np.zeros((n, 4), dtype=np.float64),
        "s": np.zeros((n, 3), dtype=np.float64),
        "alpha": np.zeros(n, dtype=np.float64),
        "sh": np.zeros((n, 3, cache.d_color), dtype=np.float64),
        "f": np.zeros((n, SEM_DIM), dtype=np.float64),
    }
    order = cache.order
    grads["p_delta"][order] = dp_world
    grads["q"][order] = dq
    grads["s"][order] = ds
    grads["alpha"][order] = galpha
    grads["sh"][order] = dsh
    grads["f"][order] = gfeat
    return grads


def _rotmat_quat_grad(qn: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, shape (n, 4, 3, 3)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    zero = np.zeros_like(w)
    g = np.empty((qn.shape[0], 4, 3, 3), dtype=np.float64)
    g[:, 0] = np.stack([zero, -z, y, z, zero, -x, -y, x, zero],
                       axis=1).reshape(-1, 3, 3)
    g[:, 1] = np.stack([zero, y, z, y, -2.0 * x, -w, z, w, -2.0 * x],
                       axis=1).reshape(-1, 3, 3)
    g[:, 2] = np.stack([-2.0 * y, x, w, x, zero, z, -w, z, -2.0 * y],
                       axis=1).reshape(-1, 3, 3)
    g[:, 3] = np.stack([-2.0 * z, -w, x, w, -2.0 * z, y, x, y, zero],
                       axis=1).reshape(-1, 3, 3)
    return 2.0 * g
