"""Losses, their analytic gradients through the renderer, and the Adam loop.

Loss structure: total = lambda_rgb * (lambda1 * L1 + lambda2 * SSIM-loss)
+ lambda_feat * feature-cosine loss. The optimizer works in unconstrained
space (p_delta, raw quaternion, log scale, logit alpha, SH, f) and projects
back to valid stored values when it writes the scene out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .cameras import Camera
from .errors import EmptyPool, RangeError, ShapeMismatch, TooSmall
from .gaussians import GaussianScene, normalize_quat
from .renderer import RenderOutput, RenderSettings, render, render_backward

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_FEAT_NORM_EPS = 1e-8      # under the sqrt; keeps zero predictions finite

# raw-space write-back bounds; keep stored values strictly inside (0,1) after
# a float32 round trip
_LOGIT_LIMIT = 13.8155105579643
_LOG_S_MIN = math.log(1e-6)
_LOG_S_MAX = math.log(1e2)


@dataclass(frozen=True)
class LossWeights:
    lambda_rgb: float = 1.0
    lambda_feat: float = 1.0
    lambda1: float = 0.8
    lambda2: float = 0.2

    def __post_init__(self):
        vals = (self.lambda_rgb, self.lambda_feat, self.lambda1, self.lambda2)
        if any(v < 0 for v in vals):
            raise RangeError("loss weights must be nonnegative")
        if all(v == 0 for v in vals):
            raise RangeError("loss weights cannot all be zero")


@dataclass(frozen=True)
class OptimConfig:
    lr_position: float = 1e-2     # mu, applied through p_delta
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_alpha: float = 5e-2
    lr_sh: float = 2.5e-2
    lr_feat: float = 2.5e-3
    iterations: int = 600
    batch: int = 4
    gamma: Optional[float] = None   # None: decay to 0.1x over all iterations

    def __post_init__(self):
        rates = (self.lr_position, self.lr_rotation, self.lr_scale,
                 self.lr_alpha, self.lr_sh, self.lr_feat)
        if any(r <= 0 for r in rates):
            raise RangeError("learning rates must be positive")
        if self.iterations < 0:
            raise RangeError("iterations must be >= 0")
        if self.batch < 1:
            raise RangeError("batch must be >= 1")
        if self.gamma is not None and not (0 < self.gamma <= 1):
            raise RangeError("gamma must be in (0, 1]")

    def decay(self) -> float:
        if self.gamma is not None:
            return self.gamma
        if self.iterations <= 1:
            return 1.0
        return 0.1 ** (1.0 / self.iterations)


@dataclass(frozen=True)
class SupervisionView:
    cam: Camera
    rgb: np.ndarray                      # (H, W, 3)
    feat: Optional[np.ndarray] = None    # (H, W, 16); None = RGB-only view


class LossBreakdown(NamedTuple):
    total: float
    l1: float
    ssim: float
    feat: float


def l1_loss(img: np.ndarray, target: np.ndarray) -> float:
    img = np.asarray(img, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if img.shape != target.shape:
        raise ShapeMismatch(f"l1 shapes differ: {img.shape} vs {target.shape}")
    return float(np.mean(np.abs(img - target)))


def _l1_with_grad(img, target):
    diff = img - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _ssim_window() -> np.ndarray:
    half = (_SSIM_WIN - 1) / 2.0
    xs = np.arange(_SSIM_WIN, dtype=np.float64) - half
    w = np.exp(-(xs ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    return w / w.sum()


_WIN1D = _ssim_window()


def _smooth(img: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian window, zero padding, same size. Channels
    ride along untouched."""
    out = correlate1d(img, _WIN1D, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WIN1D, axis=1, mode="constant", cval=0.0)


def _ssim_terms(x, y):
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    m1 = _smooth(x)
    m2 = _smooth(y)
    m11 = _smooth(x * x)
    m22 = _smooth(y * y)
    m12 = _smooth(x * y)
    a1 = 2.0 * m1 * m2 + c1
    a2 = 2.0 * (m12 - m1 * m2) + c2
    b1 = m1 * m1 + m2 * m2 + c1
    b2 = (m11 - m1 * m1) + (m22 - m2 * m2) + c2
    return m1, m2, a1, a2, b1, b2


def ssim_loss(img: np.ndarray, target: np.ndarray) -> float:
    """1 - mean SSIM (window 11, sigma 1.5, K1=0.01, K2=0.03, range 1)."""
    x = np.asarray(img, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"ssim shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] < _SSIM_WIN or x.shape[1] < _SSIM_WIN:
        raise TooSmall(f"ssim needs at least {_SSIM_WIN}x{_SSIM_WIN} images, got {x.shape}")
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y)
    return float(1.0 - np.mean((a1 * a2) / (b1 * b2)))


def _ssim_loss_with_grad(x, y):
    """Loss plus d(loss)/dx. The adjoint of the zero-padded window smoothing
    is itself (symmetric kernel), so each moment's gradient is one more
    smoothing pass."""
    if x.shape[0] < _SSIM_WIN or x.shape[1] < _SSIM_WIN:
        raise TooSmall(f"ssim needs at least {_SSIM_WIN}x{_SSIM_WIN} images, got {x.shape}")
    m1, m2, a1, a2, b1, b2 = _ssim_terms(x, y)
    s = (a1 * a2) / (b1 * b2)
    g = -1.0 / s.size                      # d loss / d S(p)
    # S as a function of the window moments m1, m11, m12
    d_m1 = g * (2.0 * m2 * (a2 - a1) / (b1 * b2)
                - 2.0 * m1 * s * (1.0 / b1 - 1.0 / b2))
    d_m11 = g * (-s / b2)
    d_m12 = g * (2.0 * a1 / (b1 * b2))
    grad = _smooth(d_m1) + 2.0 * x * _smooth(d_m11) + y * _smooth(d_m12)
    return float(1.0 - np.mean(s)), grad


def feat_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean (1 - cos) over pixels whose target feature is nonzero."""
    loss, _ = _feat_loss_with_grad(np.asarray(pred, dtype=np.float64),
                                   np.asarray(target, dtype=np.float64))
    return loss


def _feat_loss_with_grad(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch(f"feature shapes differ: {pred.shape} vs {target.shape}")
    nt = np.linalg.norm(target, axis=-1)
    keep = nt > 0
    grad = np.zeros_like(pred)
    n_inc = int(keep.sum())
    if n_inc == 0:
        return 0.0, grad
    p = pred[keep]
    t = target[keep]
    np_ = np.sqrt(np.sum(p * p, axis=-1) + _FEAT_NORM_EPS)
    dot = np.sum(p * t, axis=-1)
    denom = np_ * nt[keep]
    cos = dot / denom
    # d(1-cos)/dp = -(t - p * dot / np^2) / (np * nt), averaged over pixels
    gp = -(t - p * (dot / (np_ ** 2))[..., None]) / (denom[..., None] * n_inc)
    grad[keep] = gp
    return float(np.mean(1.0 - cos)), grad


def total_loss(out: RenderOutput, target_rgb: np.ndarray,
               target_feat: Optional[np.ndarray],
               w: Optional[LossWeights] = None) -> LossBreakdown:
    w = w or LossWeights()
    l1 = l1_loss(out.rgb, target_rgb)
    ss = ssim_loss(out.rgb, target_rgb)
    ft = feat_loss(out.feat, target_feat) if target_feat is not None else 0.0
    total = w.lambda_rgb * (w.lambda1 * l1 + w.lambda2 * ss) + w.lambda_feat * ft
    return LossBreakdown(total=float(total), l1=l1, ssim=ss, feat=ft)


def backward(scene: GaussianScene, cam: Camera, target_rgb: np.ndarray,
             target_feat: Optional[np.ndarray] = None,
             w: Optional[LossWeights] = None,
             settings: Optional[RenderSettings] = None):
    """Analytic gradients of total_loss in unconstrained parameter space.

    Returns (grads, losses) where grads has keys p_delta, q (projected raw
    quaternion), log_s, logit_alpha, sh, f.
    """
    w = w or LossWeights()
    out = render(scene, cam, settings, with_cache=True)
    losses, act = _loss_grads_through_render(out, target_rgb, target_feat, w)
    grads = {
        "p_delta": act["p_delta"],
        "q": act["q"],
        "log_s": act["s"] * scene.s,
        "logit_alpha": act["alpha"] * scene.alpha * (1.0 - scene.alpha),
        "sh": act["sh"],
        "f": act["f"],
    }
    return grads, losses


def _loss_grads_through_render(out: RenderOutput, target_rgb, target_feat, w):
    """Pixel-space loss gradients pushed back to activated Gaussian params."""
    target_rgb = np.asarray(target_rgb, dtype=np.float64)
    if target_rgb.shape != out.rgb.shape:
        raise ShapeMismatch(
            f"rgb target shape {target_rgb.shape} != render {out.rgb.shape}")
    l1, d_l1 = _l1_with_grad(out.rgb, target_rgb)
    ss, d_ss = _ssim_loss_with_grad(out.rgb, target_rgb)
    dL_drgb = w.lambda_rgb * (w.lambda1 * d_l1 + w.lambda2 * d_ss)
    ft = 0.0
    dL_dfeat = None
    if target_feat is not None and w.lambda_feat > 0:
        target_feat = np.asarray(target_feat, dtype=np.float64)
        ft, d_ft = _feat_loss_with_grad(out.feat, target_feat)
        dL_dfeat = w.lambda_feat * d_ft
    total = w.lambda_rgb * (w.lambda1 * l1 + w.lambda2 * ss) + w.lambda_feat * ft
    losses = LossBreakdown(total=float(total), l1=l1, ssim=ss, feat=ft)
    return losses, render_backward(out, dL_drgb=dL_drgb, dL_dfeat=dL_dfeat)


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-15):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict, grads: dict, lrs: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[k] -= lrs[k] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def optimize(scene: GaussianScene, pool: Sequence[SupervisionView],
             cfg: Optional[OptimConfig] = None,
             w: Optional[LossWeights] = None, *,
             settings: Optional[RenderSettings] = None,
             seed: int = 0,
             log_csv=None,
             on_step=None) -> GaussianScene:
    """Adam over the whole scene against a pool of supervision views.

    Each iteration draws cfg.batch views uniformly without replacement,
    averages their gradients, and applies per-parameter learning rates with
    exponential per-step decay. Deterministic given (seed, pool order).
    log_csv, when set, streams one row per iteration; on_step(i, losses)
    is called with the batch-averaged loss breakdown.
    """
    cfg = cfg or OptimConfig()
    w = w or LossWeights()
    pool = list(pool)
    if not pool:
        raise EmptyPool("supervision pool is empty")
    if cfg.iterations == 0:
        return scene.copy()

    params = {
        "p_delta": scene.p_delta.copy(),
        "q": scene.q.copy(),
        "log_s": np.log(scene.s),
        "logit_alpha": np.log(scene.alpha) - np.log1p(-scene.alpha),
        "sh": scene.sh.copy(),
        "f": scene.f.copy(),
    }
    base_lrs = {"p_delta": cfg.lr_position, "q": cfg.lr_rotation,
                "log_s": cfg.lr_scale, "logit_alpha": cfg.lr_alpha,
                "sh": cfg.lr_sh, "f": cfg.lr_feat}
    adam = _Adam({k: v.shape for k, v in params.items()})
    rng = np.random.default_rng(seed)
    gamma = cfg.decay()
    batch = min(cfg.batch, len(pool))

    writer = fh = None
    if log_csv is not None:
        fh = open(log_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l1", "ssim", "feat", "total", "lr"])

    try:
        for it in range(cfg.iterations):
            cur = _activated_scene(scene, params)
            picks = rng.choice(len(pool), size=batch, replace=False)
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            sums = np.zeros(4)
            for vi in picks:
                view = pool[vi]
                out = render(cur, view.cam, settings, with_cache=True)
                losses, act = _loss_grads_through_render(
                    out, view.rgb, view.feat, w)
                sums += np.array(losses)
                acc["p_delta"] += act["p_delta"]
                acc["q"] += act["q"] / np.linalg.norm(params["q"], axis=1,
                                                      keepdims=True)
                acc["log_s"] += act["s"] * cur.s
                acc["logit_alpha"] += act["alpha"] * cur.alpha * (1.0 - cur.alpha)
                acc["sh"] += act["sh"]
                acc["f"] += act["f"]
            for k in acc:
                acc[k] /= batch
            scale = gamma ** it
            adam.step(params, acc, {k: lr * scale for k, lr in base_lrs.items()})
            params["logit_alpha"] = np.clip(params["logit_alpha"],
                                            -_LOGIT_LIMIT, _LOGIT_LIMIT)
            params["log_s"] = np.clip(params["log_s"], _LOG_S_MIN, _LOG_S_MAX)
            mean = sums / batch
            losses = LossBreakdown(total=mean[0], l1=mean[1], ssim=mean[2],
                                   feat=mean[3])
            if writer is not None:
                writer.writerow([it, f"{losses.l1:.8g}", f"{losses.ssim:.8g}",
                                 f"{losses.feat:.8g}", f"{losses.total:.8g}",
                                 f"{cfg.lr_position * scale:.8g}"])
                fh.flush()
            if on_step is not None:
                on_step(it, losses)
    finally:
        if fh is not None:
            fh.close()
    return _activated_scene(scene, params)


def _activated_scene(scene: GaussianScene, params: dict) -> GaussianScene:
    """Raw parameters -> a valid scene (unit q, positive s, alpha in (0,1))."""
    return GaussianScene(
        p=scene.p.copy(),
        p_delta=params["p_delta"].copy(),
        q=normalize_quat(params["q"]),
        s=np.exp(np.clip(params["log_s"], _LOG_S_MIN, _LOG_S_MAX)),
        alpha=_sigmoid(np.clip(params["logit_alpha"], -_LOGIT_LIMIT, _LOGIT_LIMIT)),
        sh=params["sh"].copy(),
        f=params["f"].copy(),
        frame_note=scene.frame_note,
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
