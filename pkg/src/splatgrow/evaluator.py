"""Open-vocabulary benchmark machinery: pose sweeps, relevance-score
querying, opacity-gated IoU, and majority-vote ground-truth aggregation.

Scoring restricts to the extrapolated region: pixels where the INITIAL
scene renders with low accumulated opacity. Predictions only count where
the evaluated scene actually rendered something (A above a validity gate).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import jsonschema
import numpy as np

from .cameras import Camera
from .codec import SemanticCodec, decode
from .errors import (AllExcluded, DimensionMismatch, FormatError, RangeError,
                     ShapeMismatch)
from .gaussians import GaussianScene
from .grower import rotate_camera
from .renderer import RenderSettings, render

CANONICAL_PHRASES = ("object", "things", "stuff", "texture")

H_RANGE = (-60.0, 60.0)
V_RANGE = (-20.0, 20.0)


class _Excluded:
    """Sentinel for images whose predicted/GT union is empty."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXCLUDED"


EXCLUDED = _Excluded()


@dataclass(frozen=True)
class QuerySpec:
    name: str
    g_qry: np.ndarray                 # (d_high,)
    canonicals: np.ndarray            # (k, d_high)
    threshold: float = 0.5

    def __post_init__(self):
        g = np.asarray(self.g_qry, dtype=np.float64).reshape(-1)
        c = np.asarray(self.canonicals, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] == 0:
            raise RangeError("canonicals must be a non-empty (k, d) array")
        if c.shape[1] != g.shape[0]:
            raise DimensionMismatch(
                f"canonical dim {c.shape[1]} != query dim {g.shape[0]}")
        if not (0.0 < self.threshold < 1.0):
            raise RangeError(f"threshold must be in (0,1), got {self.threshold}")
        object.__setattr__(self, "g_qry", g)
        object.__setattr__(self, "canonicals", c)


@dataclass(frozen=True)
class EvalGates:
    extrapolated_gate: float = 0.3    # initial-scene A below this = evaluated
    valid_gate: float = 0.01          # evaluated-scene A above this = counted

    def __post_init__(self):
        if not (0.0 < self.valid_gate < self.extrapolated_gate < 1.0):
            raise RangeError(
                "gates must satisfy 0 < valid_gate < extrapolated_gate < 1")


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def relevance(g_img: np.ndarray, q: QuerySpec) -> float:
    """min over canonicals of exp(g.q) / (exp(g.q) + exp(g.c_i))."""
    g = np.asarray(g_img, dtype=np.float64).reshape(-1)
    if g.shape[0] != q.g_qry.shape[0]:
        raise DimensionMismatch(
            f"image dim {g.shape[0]} != query dim {q.g_qry.shape[0]}")
    qdot = float(g @ q.g_qry)
    cdots = q.canonicals @ g
    return float(np.min(_sigmoid(qdot - cdots)))


def relevance_map(feat: np.ndarray, codec: SemanticCodec,
                  q: QuerySpec) -> np.ndarray:
    """Per-pixel relevance of a rendered 16-d feature map."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 3:
        raise ShapeMismatch(f"feature map must be HxWxC, got {feat.shape}")
    h, w, c = feat.shape
    g = decode(codec, feat.reshape(h * w, c))
    qdot = g @ q.g_qry
    cdots = g @ q.canonicals.T                       # (hw, k)
    rel = np.min(_sigmoid(qdot[:, None] - cdots), axis=1)
    return rel.reshape(h, w)


def query_mask(feat: np.ndarray, codec: SemanticCodec, q: QuerySpec,
               acc: np.ndarray, gates: Optional[EvalGates] = None) -> np.ndarray:
    """Binary mask: rendered confidently AND relevant to the query."""
    gates = gates or EvalGates()
    acc = np.asarray(acc, dtype=np.float64)
    if acc.shape != np.asarray(feat).shape[:2]:
        raise ShapeMismatch(
            f"opacity shape {acc.shape} != feature map {np.asarray(feat).shape[:2]}")
    rel = relevance_map(feat, codec, q)
    return ((acc > gates.valid_gate) & (rel > q.threshold)).astype(np.uint8)


def iou(pred: np.ndarray, gt: np.ndarray):
    """Intersection over union, or EXCLUDED when the union is empty."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"iou shapes differ: {pred.shape} vs {gt.shape}")
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return EXCLUDED
    return float(np.count_nonzero(pred & gt) / union)


class CategoryScore(NamedTuple):
    iou: Optional[float]     # None when every image was excluded
    n_included: int


class MiouResult(NamedTuple):
    per_category: dict       # name -> CategoryScore
    miou: float


def miou(per_category_ious: Mapping[str, Sequence]) -> MiouResult:
    """Mean of per-category mean IoUs; excluded images drop out, and a
    category with no included images drops out of the overall mean."""
    per_category = {}
    means = []
    for name, scores in per_category_ious.items():
        vals = [float(s) for s in scores if s is not EXCLUDED]
        if vals:
            m = float(np.mean(vals))
            per_category[name] = CategoryScore(iou=m, n_included=len(vals))
            means.append(m)
        else:
            per_category[name] = CategoryScore(iou=None, n_included=0)
    if not means:
        raise AllExcluded("every image of every category was excluded")
    return MiouResult(per_category=per_category, miou=float(np.mean(means)))


def majority_vote(label_maps: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel mode over voters; ties go to the smallest label id."""
    if len(label_maps) == 0:
        raise RangeError("majority_vote needs at least one map")
    maps = [np.asarray(m).astype(np.int64) for m in label_maps]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ShapeMismatch("label maps must share one shape")
    stack = np.stack(maps)                              # (K, ...)
    labels = np.unique(stack)
    counts = np.stack([(stack == lab).sum(axis=0) for lab in labels])
    return labels[np.argmax(counts, axis=0)]            # first max = smallest


def go_poses(base: Camera, n: int = 16) -> list:
    """n/2 horizontal and n/2 vertical view rotations, inclusive uniform
    grids over the benchmark angle ranges."""
    if n < 2 or n % 2 != 0:
        raise RangeError(f"pose count must be even and >= 2, got {n}")
    half = n // 2
    poses = [rotate_camera(base, th, 0.0)
             for th in np.linspace(H_RANGE[0], H_RANGE[1], half)]
    poses += [rotate_camera(base, 0.0, tv)
              for tv in np.linspace(V_RANGE[0], V_RANGE[1], half)]
    return poses


def extrapolated_region(initial_scene: GaussianScene, cam: Camera,
                        gates: Optional[EvalGates] = None,
                        settings: Optional[RenderSettings] = None) -> np.ndarray:
    """Pixels the initial scene could not render confidently."""
    gates = gates or EvalGates()
    out = render(initial_scene, cam, settings)
    return (out.acc_opacity < gates.extrapolated_gate).astype(np.uint8)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["per_category", "miou", "n_images", "gates", "threshold",
                 "pose_split"],
    "properties": {
        "per_category": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["iou", "n_included"],
                "properties": {
                    "iou": {"type": ["number", "null"]},
                    "n_included": {"type": "integer", "minimum": 0},
                },
            },
        },
        "miou": {"type": "number"},
        "n_images": {"type": "integer", "minimum": 1},
        "gates": {
            "type": "object",
            "required": ["extrapolated_gate", "valid_gate"],
        },
        "threshold": {"type": "number"},
        "pose_split": {
            "type": "object",
            "required": ["horizontal", "vertical"],
        },
    },
}


def load_gt_labels(gt_dir: str, n_poses: int):
    """Ground-truth label maps plus the name -> id manifest.

    Layout: gt_dir/labels.json maps category names to integer ids; label
    maps live either directly in gt_dir as label_<i>.(png|ogt) or in one
    subdirectory per annotation model, in which case the maps are fused by
    per-pixel majority vote."""
    from .tensorio import load_label_map

    manifest_path = os.path.join(gt_dir, "labels.json")
    if not os.path.exists(manifest_path):
        raise FormatError(f"missing label manifest {manifest_path}")
    with open(manifest_path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad label manifest: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise FormatError("label manifest must be a non-empty name->id object")
    labels = {str(k): int(v) for k, v in raw.items()}

    def read_set(d):
        maps = []
        for i in range(n_poses):
            for ext in ("png", "ogt"):
                p = os.path.join(d, f"label_{i:03d}.{ext}")
                if os.path.exists(p):
                    maps.append(load_label_map(p))
                    break
            else:
                raise FormatError(f"missing ground-truth map for pose {i} in {d}")
        return maps

    subdirs = sorted(e.path for e in os.scandir(gt_dir) if e.is_dir())
    if subdirs:
        votes = [read_set(d) for d in subdirs]
        maps = [majority_vote([v[i] for v in votes]) for i in range(n_poses)]
    else:
        maps = read_set(gt_dir)
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ShapeMismatch("ground-truth maps must share one shape")
    return maps, labels


def evaluate(final_scene: GaussianScene, initial_scene: GaussianScene,
             base_cam: Camera, codec: SemanticCodec,
             queries: Sequence[QuerySpec], gt_maps: Sequence[np.ndarray],
             labels: Mapping[str, int], *,
             gates: Optional[EvalGates] = None,
             settings: Optional[RenderSettings] = None,
             n_poses: int = 16,
             restrict_to_extrapolated: bool = True):
    """Score every query at every benchmark pose.

    Returns (report dict, per-image rows). Rows carry (pose, category, iou
    or EXCLUDED, pixel counts) for the CSV output."""
    gates = gates or EvalGates()
    if len(gt_maps) != n_poses:
        raise ShapeMismatch(
            f"need {n_poses} ground-truth maps, got {len(gt_maps)}")
    by_name = {q.name: q for q in queries}
    missing = [name for name in labels if name not in by_name]
    if missing:
        raise RangeError(f"no query vectors for categories: {missing}")

    poses = go_poses(base_cam, n_poses)
    rows = []
    scores = {name: [] for name in labels}
    for pi, cam in enumerate(poses):
        out = render(final_scene, cam, settings)
        region = extrapolated_region(initial_scene, cam, gates, settings) \
            .astype(bool) if restrict_to_extrapolated else \
            np.ones_like(out.acc_opacity, dtype=bool)
        for name, lab in labels.items():
            pred = query_mask(out.feat, codec, by_name[name],
                              out.acc_opacity, gates).astype(bool) & region
            gt = (np.asarray(gt_maps[pi]) == lab) & region
            score = iou(pred, gt)
            scores[name].append(score)
            rows.append({
                "pose": pi, "category": name,
                "iou": "EXCLUDED" if score is EXCLUDED else f"{score:.6f}",
                "n_pred": int(pred.sum()), "n_gt": int(gt.sum()),
            })

    result = miou(scores)
    report = {
        "per_category": {
            name: {"iou": cs.iou, "n_included": cs.n_included}
            for name, cs in result.per_category.items()
        },
        "miou": result.miou,
        "n_images": n_poses * len(labels),
        "gates": {"extrapolated_gate": gates.extrapolated_gate,
                  "valid_gate": gates.valid_gate},
        "threshold": float(next(iter(queries)).threshold) if queries else 0.5,
        "pose_split": {"horizontal": n_poses // 2, "vertical": n_poses // 2},
    }
    jsonschema.validate(report, REPORT_SCHEMA)
    return report, rows


def write_report(report: dict, rows, outdir: str, make_figure: bool = True) -> None:
    """report.json, per-image scores.csv, and the IoU bar figure."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "scores.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["pose", "category", "iou", "n_pred", "n_gt"])
        writer.writeheader()
        writer.writerows(rows)
    if make_figure:
        from .figures import iou_bar_figure

        cats = sorted(report["per_category"])
        vals = [report["per_category"][c]["iou"] or 0.0 for c in cats]
        iou_bar_figure(cats, vals, os.path.join(outdir, "iou.png"))
