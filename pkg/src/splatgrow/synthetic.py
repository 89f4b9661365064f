"""Synthetic room scenes for tests and the CLI demo.

The toy scene is the inside of a box: floor, ceiling, back wall, and two
side walls, each carrying its own color pattern and its own unit feature
direction so semantic queries have a ground truth. Cameras sit near the
origin looking down +z.
"""

from __future__ import annotations

import numpy as np

from .cameras import Camera
from .codec import CategoryBank, SemanticCodec
from .gaussians import SEM_DIM, GaussianScene
from .optimizer import SupervisionView
from .renderer import RenderSettings, render
from .sh import SH_C0

FACE_NAMES = ("floor", "ceiling", "back wall", "left wall", "right wall")

# box interior: x in [-2, 2], y in [-1.5, 1.5], z in [0.5, 4.5]
_X, _Y, _Z0, _Z1 = 2.0, 1.5, 0.5, 4.5


def face_feature_directions() -> np.ndarray:
    """One fixed unit vector per face, pairwise well separated."""
    rng = np.random.default_rng(1234)
    v = rng.standard_normal((len(FACE_NAMES), SEM_DIM))
    q, _ = np.linalg.qr(v.T)
    return q.T[: len(FACE_NAMES)]


def _face_points(rng, n, face):
    u = rng.uniform(0.0, 1.0, n)
    v = rng.uniform(0.0, 1.0, n)
    x = (2 * u - 1) * _X
    y = (2 * v - 1) * _Y
    z = _Z0 + u * (_Z1 - _Z0)
    zv = _Z0 + v * (_Z1 - _Z0)
    if face == 0:
        return np.stack([x, np.full(n, _Y), zv], axis=1)       # floor (+y is down)
    if face == 1:
        return np.stack([x, np.full(n, -_Y), zv], axis=1)      # ceiling
    if face == 2:
        return np.stack([x, y, np.full(n, _Z1)], axis=1)       # back wall
    if face == 3:
        return np.stack([np.full(n, -_X), y, zv], axis=1)      # left wall
    return np.stack([np.full(n, _X), y, zv], axis=1)           # right wall


def _face_colors(pts, face):
    """Cheap per-face checker and gradient patterns in [0.1, 0.9]."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    checker = ((np.floor(x * 2) + np.floor(z * 2)) % 2)
    base = np.array([
        [0.55, 0.40, 0.25],
        [0.80, 0.80, 0.75],
        [0.30, 0.45, 0.70],
        [0.65, 0.30, 0.30],
        [0.30, 0.60, 0.35],
    ])[face]
    c = np.tile(base, (pts.shape[0], 1))
    c[:, 0] = np.clip(c[:, 0] + 0.15 * checker - 0.05 * (z - _Z0) / (_Z1 - _Z0), 0.1, 0.9)
    c[:, 1] = np.clip(c[:, 1] + 0.10 * np.sin(3.0 * x) * np.cos(2.0 * y), 0.1, 0.9)
    c[:, 2] = np.clip(c[:, 2] + 0.12 * checker, 0.1, 0.9)
    return c


def box_scene(points_per_face: int = 400, seed: int = 0,
              scale: float = 0.09) -> GaussianScene:
    """Gaussians sampled on the five visible interior faces of the box."""
    rng = np.random.default_rng(seed)
    dirs = face_feature_directions()
    ps, shs, fs = [], [], []
    for face in range(len(FACE_NAMES)):
        pts = _face_points(rng, points_per_face, face)
        cols = _face_colors(pts, face)
        ps.append(pts)
        shs.append((cols - 0.5) / SH_C0)
        fs.append(np.tile(dirs[face], (points_per_face, 1)))
    p = np.concatenate(ps)
    n = p.shape[0]
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return GaussianScene(
        p=p,
        p_delta=np.zeros((n, 3)),
        q=q,
        s=np.full((n, 3), scale),
        alpha=np.full(n, 0.85),
        sh=np.concatenate(shs)[:, :, None],
        f=np.concatenate(fs),
        frame_note="normalized to first context view",
    )


def context_cameras(height: int = 64, width: int = 64,
                    baseline: float = 0.25, focal: float | None = None) -> list:
    """Two forward-looking cameras separated along x."""
    base = Camera.identity(height, width, focal=focal)
    left = base.with_pose(base.R, base.t + np.array([baseline / 2, 0.0, 0.0]))
    right = base.with_pose(base.R, base.t - np.array([baseline / 2, 0.0, 0.0]))
    return [left, right]


def wedge_subset(scene: GaussianScene, cams, half_angle_deg: float = 18.0) -> GaussianScene:
    """Keep primitives within half_angle of any camera's optical axis.
    This is the sparse starting scene the growth loop must extend."""
    keep = np.zeros(scene.n, dtype=bool)
    cos_lim = np.cos(np.radians(half_angle_deg))
    centers = scene.centers()
    for cam in cams:
        rel = centers - cam.center
        axis = cam.R[2]
        d = rel / np.linalg.norm(rel, axis=1, keepdims=True)
        keep |= d @ axis >= cos_lim
    idx = np.where(keep)[0]
    return GaussianScene(
        p=scene.p[idx], p_delta=scene.p_delta[idx], q=scene.q[idx],
        s=scene.s[idx], alpha=scene.alpha[idx], sh=scene.sh[idx],
        f=scene.f[idx], frame_note=scene.frame_note,
    )


def toy_codec() -> SemanticCodec:
    """Identity codec: high-dimensional space already 16-d."""
    return SemanticCodec.identity()


def toy_bank() -> CategoryBank:
    """Face categories plus two distractors that never win."""
    rng = np.random.default_rng(99)
    dirs = face_feature_directions()
    extra = rng.standard_normal((2, SEM_DIM))
    extra -= (extra @ dirs.T) @ dirs     # orthogonal to every face direction
    vectors = np.concatenate([dirs, extra], axis=0)
    return CategoryBank(names=FACE_NAMES + ("window", "door"), vectors=vectors)


def render_context(scene: GaussianScene, cams,
                   settings: RenderSettings | None = None) -> list:
    """Supervision views rendered straight off the given scene."""
    settings = settings or RenderSettings()
    views = []
    for cam in cams:
        out = render(scene, cam, settings)
        views.append(SupervisionView(cam=cam, rgb=out.rgb, feat=out.feat))
    return views
