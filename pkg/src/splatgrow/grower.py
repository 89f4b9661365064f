"""Progressive scene growth: anchor scheduling, depth lifting with scale
alignment, spawning, merging, and per-round optimization.

Each round renders a set of anchor views from the current scene, inpaints the
low-opacity regions through the adapter, lifts the inpainted pixels to 3D
with a monocular depth map rescaled by beta, spawns one Gaussian per lifted
pixel, and re-optimizes against every supervision view collected so far.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import jsonschema
import numpy as np
from scipy.spatial import cKDTree

from .bridge import AdapterFailure, InpaintJob, InpaintResult, fetch_depth, inpaint
from .cameras import Camera
from .codec import CategoryBank, SemanticCodec
from .edgeprompt import build_prompt, edge_categories, extract_edge
from .errors import (EmptyOverlap, NoBoundary, NonPositiveDepth, RangeError,
                     RoundAborted, ShapeMismatch)
from .gaussians import SEM_DIM, GaussianScene
from .optimizer import (LossWeights, OptimConfig, SupervisionView, optimize,
                        render)
from .renderer import RenderSettings, compute_mask
from .sh import SH_C0

THETA_H_MAX = 60.0
THETA_V_MAX = 20.0
SPAWN_SCALE_MIN = 1e-4
SPAWN_SCALE_MAX = 0.1
SPAWN_SCALE_LONE = 0.01      # single spawned point has no neighbors
SPAWN_ALPHA = 0.5

DEFAULT_ROUNDS = (
    ((0.0, 0.0),),
    ((0.0, 20.0), (0.0, -20.0)),
    ((30.0, 0.0), (-30.0, 0.0)),
    ((60.0, 0.0), (-60.0, 0.0)),
)

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["round", "aborted", "anchors", "primitives_before",
                 "primitives_after", "supervision_views", "final_losses"],
    "properties": {
        "round": {"type": "integer", "minimum": 1},
        "aborted": {"type": "boolean"},
        "abort_reason": {"type": ["string", "null"]},
        "anchors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["theta_h", "theta_v", "prompt", "beta",
                             "mask_coverage_pct", "spawned"],
                "properties": {
                    "theta_h": {"type": "number"},
                    "theta_v": {"type": "number"},
                    "prompt": {"type": ["string", "null"]},
                    "beta": {"type": ["number", "null"]},
                    "mask_coverage_pct": {"type": "number"},
                    "spawned": {"type": "integer", "minimum": 0},
                },
            },
        },
        "primitives_before": {"type": "integer", "minimum": 0},
        "primitives_after": {"type": "integer", "minimum": 0},
        "supervision_views": {"type": "integer", "minimum": 0},
        "final_losses": {
            "type": ["object", "null"],
            "required": ["total", "l1", "ssim", "feat"],
            "properties": {k: {"type": "number"}
                           for k in ("total", "l1", "ssim", "feat")},
        },
    },
}


@dataclass(frozen=True)
class AnchorSchedule:
    """Ordered rounds of (theta_h, theta_v) view rotations in degrees.

    Angles are decoupled: a nonzero horizontal angle forces the vertical one
    to zero and vice versa. The (0, 0) entry is special: it stands for all
    context poses, unrotated.
    """

    rounds: tuple = DEFAULT_ROUNDS

    def __post_init__(self):
        norm = []
        for entry in self.rounds:
            pairs = []
            for th, tv in entry:
                th, tv = float(th), float(tv)
                if not (-THETA_H_MAX <= th <= THETA_H_MAX):
                    raise RangeError(f"theta_h {th} outside [-60, 60]")
                if not (-THETA_V_MAX <= tv <= THETA_V_MAX):
                    raise RangeError(f"theta_v {tv} outside [-20, 20]")
                if th != 0.0 and tv != 0.0:
                    raise RangeError(
                        f"angles must be decoupled, got ({th}, {tv})")
                pairs.append((th, tv))
            norm.append(tuple(pairs))
        object.__setattr__(self, "rounds", tuple(norm))

    def __len__(self) -> int:
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)


@dataclass
class GrowthState:
    """Scene plus the supervision pool accumulated across rounds."""

    scene: GaussianScene
    supervision: list
    round_index: int = 0


@dataclass(frozen=True)
class GrowConfig:
    tau: float = 0.3
    band_width: int = 3
    max_categories: int = 8
    codec: Optional[SemanticCodec] = None
    bank: Optional[CategoryBank] = None
    optim: OptimConfig = field(default_factory=OptimConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    settings: RenderSettings = field(default_factory=RenderSettings)
    seed: int = 0
    continue_on_abort: bool = False
    outdir: Optional[str] = None
    make_figures: bool = True


class LiftResult(NamedTuple):
    points: np.ndarray        # (m, 3) world coordinates, beta not applied
    pixel_index: np.ndarray   # (m, 2) integer (h, w), row-major order


def _rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_camera(base: Camera, theta_h: float, theta_v: float) -> Camera:
    """Rotate the view direction about the camera's own up (theta_h) and
    right (theta_v) axes, keeping the camera center fixed."""
    if not (-THETA_H_MAX <= theta_h <= THETA_H_MAX):
        raise RangeError(f"theta_h {theta_h} outside [-60, 60]")
    if not (-THETA_V_MAX <= theta_v <= THETA_V_MAX):
        raise RangeError(f"theta_v {theta_v} outside [-20, 20]")
    center = base.center
    r_new = _rot_x(theta_v) @ _rot_y(theta_h) @ base.R
    t_new = -r_new @ center
    return base.with_pose(r_new, t_new)


def lift_points(depth: np.ndarray, cam: Camera, mask: np.ndarray) -> LiftResult:
    """Unproject every mask-1 pixel of the depth map into world space.

    The output frame is whatever frame the camera pose is expressed in
    (scene scenes use the first context view's normalized frame). The scale
    correction beta is applied by the caller, not here.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask)
    if depth.ndim != 2:
        raise ShapeMismatch(f"depth must be HxW, got {depth.shape}")
    if mask.shape != depth.shape:
        raise ShapeMismatch(
            f"mask shape {mask.shape} != depth shape {depth.shape}")
    idx = np.argwhere(mask != 0)
    if idx.size == 0:
        return LiftResult(np.zeros((0, 3)), idx.reshape(0, 2))
    d = depth[idx[:, 0], idx[:, 1]]
    if np.any(d <= 0):
        raise NonPositiveDepth("lifted pixels need strictly positive depth")
    x = (idx[:, 1] - cam.cx) * d / cam.fx
    y = (idx[:, 0] - cam.cy) * d / cam.fy
    pts_cam = np.stack([x, y, d], axis=1)
    return LiftResult(cam.camera_to_world(pts_cam), idx)


def compute_beta(p_ori: np.ndarray, p_new: np.ndarray) -> float:
    """Scale factor aligning lifted points with the existing scene: the ratio
    of RMS norms of the two overlap point sets."""
    p_ori = np.asarray(p_ori, dtype=np.float64).reshape(-1, 3)
    p_new = np.asarray(p_new, dtype=np.float64).reshape(-1, 3)
    if p_ori.shape[0] == 0 or p_new.shape[0] == 0:
        raise EmptyOverlap("no overlap points to align scale with")
    ms_ori = float(np.mean(np.sum(p_ori * p_ori, axis=1)))
    ms_new = float(np.mean(np.sum(p_new * p_new, axis=1)))
    if ms_ori == 0.0 or ms_new == 0.0:
        raise EmptyOverlap("overlap points have zero RMS norm")
    return math.sqrt(ms_ori) / math.sqrt(ms_new)


def overlap_points(render_out, depth_new: np.ndarray, cam: Camera,
                   tau: float) -> tuple:
    """(p_ori, p_new) for compute_beta: pixels where the render is opaque
    enough (A >= tau) and the new depth is valid. p_ori unprojects the
    render's opacity-weighted mean depth; p_new unprojects depth_new."""
    depth_new = np.asarray(depth_new, dtype=np.float64)
    acc = render_out.acc_opacity
    if depth_new.shape != acc.shape:
        raise ShapeMismatch(
            f"depth shape {depth_new.shape} != render shape {acc.shape}")
    overlap = (acc >= tau) & (depth_new > 0)
    if not overlap.any():
        raise EmptyOverlap("render and new depth share no confident pixels")
    sel = overlap.astype(np.uint8)
    z_bar = np.zeros_like(acc)
    z_bar[overlap] = render_out.depth[overlap] / acc[overlap]
    p_ori = lift_points(np.where(overlap, z_bar, 1.0), cam, sel).points
    p_new = lift_points(np.where(overlap, depth_new, 1.0), cam, sel).points
    return p_ori, p_new


def spawn_gaussians(result: InpaintResult, p_plus: np.ndarray,
                    pixel_index: np.ndarray, mask: np.ndarray,
                    d_color: int = 1) -> GaussianScene:
    """One new primitive per lifted pixel: position from p_plus, color from
    the inpainted RGB (DC band only), feature from the inpainted feature
    map, identity rotation, alpha 0.5, isotropic scale from the median
    distance to the 3 nearest spawned neighbors."""
    p_plus = np.asarray(p_plus, dtype=np.float64).reshape(-1, 3)
    pixel_index = np.asarray(pixel_index, dtype=np.int64).reshape(-1, 2)
    if p_plus.shape[0] != pixel_index.shape[0]:
        raise ShapeMismatch("p_plus and pixel_index lengths differ")
    n = p_plus.shape[0]
    if n == 0:
        return GaussianScene.empty(d_color=d_color)
    h, w = pixel_index[:, 0], pixel_index[:, 1]
    if np.any(np.asarray(mask)[h, w] == 0):
        raise RangeError("spawn pixels must lie inside the mask")

    if n == 1:
        scale = np.array([SPAWN_SCALE_LONE])
    else:
        k = min(3, n - 1)
        dist, _ = cKDTree(p_plus).query(p_plus, k=k + 1)
        scale = np.median(dist[:, 1:], axis=1)
    scale = np.clip(scale, SPAWN_SCALE_MIN, SPAWN_SCALE_MAX)

    sh = np.zeros((n, 3, d_color))
    sh[:, :, 0] = (result.rgb_inp[h, w] - 0.5) / SH_C0
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return GaussianScene(
        p=p_plus,
        p_delta=np.zeros((n, 3)),
        q=q,
        s=np.repeat(scale[:, None], 3, axis=1),
        alpha=np.full(n, SPAWN_ALPHA),
        sh=sh,
        f=np.asarray(result.feat_inp, dtype=np.float64)[h, w],
    )


def _anchor_cams(entry, context_cams: Sequence[Camera]) -> list:
    cams = []
    for th, tv in entry:
        if th == 0.0 and tv == 0.0:
            cams.extend((c, 0.0, 0.0) for c in context_cams)
        else:
            cams.append((rotate_camera(context_cams[0], th, tv), th, tv))
    return cams


def _context_pool(initial: GaussianScene, context: Sequence[SupervisionView],
                  settings: RenderSettings) -> list:
    """Context views become supervision views; missing feature targets are
    rendered from the initial scene so the feature loss stays active."""
    pool = []
    for view in context:
        feat = view.feat
        if feat is None:
            feat = render(initial, view.cam, settings).feat
        pool.append(SupervisionView(cam=view.cam, rgb=view.rgb, feat=feat))
    return pool


def _grow_one_anchor(scene, cam, th, tv, adapter, cfg, seed):
    """Render, inpaint, lift, align, and spawn for one anchor view.
    Returns (fragment, supervision view or None, stats dict)."""
    stats = {"theta_h": th, "theta_v": tv, "prompt": None, "beta": None,
             "mask_coverage_pct": 0.0, "spawned": 0}
    out = render(scene, cam, cfg.settings)
    mask = compute_mask(out, cfg.tau)
    coverage = float(mask.m.mean())
    stats["mask_coverage_pct"] = 100.0 * coverage
    if coverage == 0.0:
        return GaussianScene.empty(d_color=scene.d_color), None, stats

    categories = []
    if cfg.codec is not None and cfg.bank is not None:
        try:
            band = extract_edge(mask, band_width=cfg.band_width)
            categories = edge_categories(band, out.feat, cfg.codec, cfg.bank,
                                         max_categories=cfg.max_categories)
        except NoBoundary:
            pass
    prompt = build_prompt(categories)
    stats["prompt"] = prompt

    job = InpaintJob(rgb=out.rgb, feat=out.feat, mask=mask.m, prompt=prompt,
                     seed=seed)
    result = inpaint(adapter, job)
    depth = result.depth_inp
    if depth is None:
        depth = fetch_depth(adapter, result.rgb_inp)

    lifted = lift_points(depth, cam, mask.m)
    try:
        p_ori, p_new = overlap_points(out, depth, cam, cfg.tau)
        beta = compute_beta(p_ori, p_new)
    except EmptyOverlap as exc:
        warnings.warn(f"scale alignment skipped (beta=1): {exc}")
        beta = 1.0
    stats["beta"] = beta

    fragment = spawn_gaussians(result, lifted.points * beta,
                               lifted.pixel_index, mask.m,
                               d_color=scene.d_color)
    stats["spawned"] = fragment.n
    view = SupervisionView(cam=cam, rgb=result.rgb_inp, feat=result.feat_inp)
    return fragment, view, stats


def grow(initial: GaussianScene, context: Sequence[SupervisionView],
         schedule: Optional[AnchorSchedule] = None, adapter=None,
         cfg: Optional[GrowConfig] = None) -> GaussianScene:
    """Run the full growth loop and return the final scene.

    Per round: anchors are rendered from the current scene, inpainted,
    lifted, spawned, merged, then the whole scene is optimized against the
    supervision pool (context plus every inpainted view so far). A manifest
    JSON, a loss CSV, and a loss figure are written per round when
    cfg.outdir is set. On AdapterFailure the failure propagates unless
    cfg.continue_on_abort, in which case the round's changes are rolled
    back and growth moves on."""
    cfg = cfg or GrowConfig()
    if schedule is None:       # empty schedules are falsy but still valid
        schedule = AnchorSchedule()
    if adapter is None:
        raise RangeError("grow needs an adapter")
    if not context:
        raise RangeError("grow needs at least one context view")
    context_cams = [v.cam for v in context]
    pool = _context_pool(initial, context, cfg.settings)
    state = GrowthState(scene=initial.copy(), supervision=pool)

    if cfg.outdir is not None:
        os.makedirs(cfg.outdir, exist_ok=True)

    for rnd, entry in enumerate(schedule, start=1):
        state.round_index = rnd
        snapshot_scene = state.scene
        snapshot_pool = list(state.supervision)
        n_before = state.scene.n
        anchors = []
        aborted_reason = None
        final_losses = None
        csv_path = None
        try:
            for ai, (cam, th, tv) in enumerate(_anchor_cams(entry, context_cams)):
                seed = cfg.seed + 1000 * rnd + ai
                fragment, view, stats = _grow_one_anchor(
                    state.scene, cam, th, tv, adapter, cfg, seed)
                anchors.append(stats)
                if fragment.n:
                    state.scene = state.scene.append(fragment)
                if view is not None:
                    state.supervision.append(view)

            if cfg.outdir is not None:
                csv_path = os.path.join(cfg.outdir, f"round_{rnd}_loss.csv")
            last = {}

            def keep_last(i, losses, _sink=last):
                _sink["losses"] = losses

            state.scene = optimize(
                state.scene, state.supervision, cfg.optim, cfg.weights,
                settings=cfg.settings, seed=cfg.seed + rnd,
                log_csv=csv_path, on_step=keep_last)
            if "losses" in last:
                lb = last["losses"]
                final_losses = {"total": lb.total, "l1": lb.l1,
                                "ssim": lb.ssim, "feat": lb.feat}
        except AdapterFailure as exc:
            if not cfg.continue_on_abort:
                raise
            state.scene = snapshot_scene
            state.supervision = snapshot_pool
            aborted_reason = str(RoundAborted(f"round {rnd}: {exc}"))
            warnings.warn(aborted_reason)

        manifest = {
            "round": rnd,
            "aborted": aborted_reason is not None,
            "abort_reason": aborted_reason,
            "anchors": anchors,
            "primitives_before": n_before,
            "primitives_after": state.scene.n,
            "supervision_views": len(state.supervision),
            "final_losses": final_losses,
        }
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
        if cfg.outdir is not None:
            path = os.path.join(cfg.outdir, f"round_{rnd}_manifest.json")
            with open(path, "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
            if csv_path is not None and os.path.exists(csv_path) and cfg.make_figures:
                from .figures import loss_curve_figure
                loss_curve_figure(
                    csv_path, os.path.join(cfg.outdir, f"round_{rnd}_loss.png"))
    return state.scene
