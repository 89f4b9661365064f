"""Command-line pipeline: render, grow, query, eval, fit-codec, export-ply,
plus a demo-data generator.

Config resolution: an optional TOML or JSON config file provides defaults,
explicit flags override it, and the fully resolved config is copied into the
output directory. Exit codes: 0 ok, 2 input error, 3 adapter error,
4 internal error. Every failure prints a one-line machine-readable JSON
error to stderr after the human message.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bridge, figures, synthetic
from .bridge import ProcessAdapter, StubAdapter, fetch_text_embedding
from .cameras import Camera
from .codec import (CategoryBank, fit_codec, load_bank, load_codec,
                    save_bank, save_codec)
from .errors import (AdapterFailure, AllExcluded, FormatError, InputError,
                     RangeError, SplatgrowError, UnknownQuery)
from .evaluator import (EvalGates, QuerySpec, evaluate, go_poses,
                        load_gt_labels, query_mask, relevance_map,
                        write_report, CANONICAL_PHRASES)
from .gaussians import GaussianScene
from .grower import AnchorSchedule, GrowConfig, grow
from .optimizer import LossWeights, OptimConfig, SupervisionView
from .renderer import RenderSettings, render
from .sceneio import export_ply, load_scene, save_scene
from .tensorio import load_tensor, save_gray_png, save_png, save_tensor

ADAPTER_ENV = "OGG_ADAPTER_CMD"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ADAPTER = 3
EXIT_INTERNAL = 4


def _require_file(path, what: str) -> str:
    if path is None:
        raise FormatError(f"missing required {what}")
    if not os.path.exists(path):
        raise FormatError(f"{what} not found: {path}")
    return path


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    _require_file(path, "config file")
    if path.endswith(".toml"):
        import tomli

        with open(path, "rb") as fh:
            try:
                return tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise FormatError(f"bad TOML config: {exc}") from exc
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad JSON config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise FormatError("config root must be an object")
    return cfg


def _resolve(args, config: dict, defaults: dict) -> dict:
    """Flag > config file > default, for every known key."""
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    return resolved


def _write_resolved(resolved: dict, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_camera(path) -> Camera:
    _require_file(path, "camera file")
    with open(path) as fh:
        try:
            return Camera.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad camera JSON: {exc}") from exc


def _make_adapter(resolved):
    cmd = resolved.get("adapter") or os.environ.get(ADAPTER_ENV)
    if cmd and cmd != "stub":
        return ProcessAdapter(cmd)
    return StubAdapter()


def _cameras_for(args, resolved, scene_cam_hint=None):
    if getattr(args, "camera", None):
        base = _load_camera(args.camera)
    elif scene_cam_hint is not None:
        base = scene_cam_hint
    else:
        base = Camera.identity(int(resolved["height"]), int(resolved["width"]),
                               focal=resolved["focal"])
    if resolved.get("poses") == "go":
        return base, go_poses(base, int(resolved["n_poses"]))
    return base, [base]


def _load_context_dir(path):
    _require_file(path, "context directory")
    views = []
    i = 0
    while True:
        cam_path = os.path.join(path, f"camera_{i:03d}.json")
        if not os.path.exists(cam_path):
            break
        cam = _load_camera(cam_path)
        rgb = load_tensor(_require_file(
            os.path.join(path, f"rgb_{i:03d}.ogt"), f"context rgb {i}"))
        feat_path = os.path.join(path, f"feat_{i:03d}.ogt")
        feat = load_tensor(feat_path) if os.path.exists(feat_path) else None
        views.append(SupervisionView(cam=cam, rgb=rgb, feat=feat))
        i += 1
    if not views:
        raise FormatError(f"no context views (camera_000.json...) in {path}")
    return views


def cmd_render(args) -> int:
    config = _load_config_file(args.config)
    defaults = {"height": 64, "width": 64, "focal": None, "poses": "single",
                "n_poses": 16, "seed": 0, "background": [0.0, 0.0, 0.0]}
    resolved = _resolve(args, config, defaults)
    scene = load_scene(_require_file(args.scene, "scene file"))
    _, cams = _cameras_for(args, resolved)
    settings = RenderSettings(background=tuple(resolved["background"]))
    _write_resolved({**resolved, "scene": args.scene}, args.outdir)

    import csv as _csv

    with open(os.path.join(args.outdir, "render_summary.csv"), "w",
              newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["pose", "mean_acc", "mean_depth", "mean_contrib"])
        for i, cam in enumerate(cams):
            out = render(scene, cam, settings)
            stem = os.path.join(args.outdir, f"{i:03d}")
            save_png(out.rgb, f"{stem}_rgb.png")
            save_tensor(out.rgb, f"{stem}_rgb.ogt")
            save_tensor(out.feat, f"{stem}_feat.ogt")
            save_tensor(out.acc_opacity, f"{stem}_acc.ogt")
            save_tensor(out.depth, f"{stem}_depth.ogt")
            figures.opacity_figure(out.acc_opacity, f"{stem}_acc.png")
            writer.writerow([i, f"{out.acc_opacity.mean():.6f}",
                             f"{out.depth.mean():.6f}",
                             f"{out.n_contrib.mean():.3f}"])
    return EXIT_OK


def cmd_grow(args) -> int:
    config = _load_config_file(args.config)
    defaults = {"iterations": 600, "batch": 4, "tau": 0.3, "band_width": 3,
                "seed": 0, "rounds": None, "adapter": None,
                "continue_on_abort": False, "codec": None, "bank": None}
    resolved = _resolve(args, config, defaults)
    initial = load_scene(_require_file(args.scene, "scene file"))
    context = _load_context_dir(args.context)
    _write_resolved({**resolved, "scene": args.scene,
                     "context": args.context}, args.outdir)

    schedule = AnchorSchedule() if resolved["rounds"] is None else \
        AnchorSchedule(rounds=tuple(tuple(tuple(p) for p in r)
                                    for r in resolved["rounds"]))
    codec = load_codec(resolved["codec"]) if resolved["codec"] else None
    bank = load_bank(resolved["bank"]) if resolved["bank"] else None
    cfg = GrowConfig(
        tau=float(resolved["tau"]), band_width=int(resolved["band_width"]),
        codec=codec, bank=bank,
        optim=OptimConfig(iterations=int(resolved["iterations"]),
                          batch=int(resolved["batch"])),
        seed=int(resolved["seed"]),
        continue_on_abort=bool(resolved["continue_on_abort"]),
        outdir=args.outdir,
    )
    adapter = _make_adapter(resolved)
    try:
        final = grow(initial, context, schedule, adapter, cfg)
    finally:
        adapter.close()
    save_scene(final, os.path.join(args.outdir, "scene_final.ogs"))
    return EXIT_OK


def _canonical_vectors(bank, d_high: int) -> np.ndarray:
    """Canonical phrase embeddings from the bank when present, otherwise the
    deterministic in-process fallback embedding."""
    vecs = []
    names = bank.names if bank is not None else ()
    for phrase in CANONICAL_PHRASES:
        if bank is not None and phrase in names:
            vecs.append(bank.vectors[names.index(phrase)])
        else:
            vecs.append(bridge.stub_text_embedding(phrase, d_high))
    return np.stack(vecs)


def _query_vector(args, bank, d_high: int) -> np.ndarray:
    if getattr(args, "embedding", None):
        vec = np.load(_require_file(args.embedding, "embedding file"))
        return np.asarray(vec, dtype=np.float64).reshape(-1)
    name = args.text
    if bank is not None and name in bank.names:
        return bank.vectors[bank.names.index(name)]
    cmd = os.environ.get(ADAPTER_ENV)
    if cmd:
        with ProcessAdapter(cmd) as adapter:
            return fetch_text_embedding(adapter, name, d_high)
    raise UnknownQuery(
        f"no embedding source for {name!r}: not in bank, no embedding file, "
        f"and {ADAPTER_ENV} unset")


def cmd_query(args) -> int:
    config = _load_config_file(args.config)
    defaults = {"height": 64, "width": 64, "focal": None, "poses": "single",
                "n_poses": 16, "seed": 0, "threshold": 0.5}
    resolved = _resolve(args, config, defaults)
    scene = load_scene(_require_file(args.scene, "scene file"))
    codec = load_codec(_require_file(args.codec, "codec file"))
    bank = load_bank(args.bank) if args.bank else None
    if not args.text and not args.embedding:
        raise FormatError("query needs --text or --embedding")
    g_qry = _query_vector(args, bank, codec.d_high)
    if g_qry.shape[0] != codec.d_high:
        raise FormatError(
            f"embedding dim {g_qry.shape[0]} != codec d_high {codec.d_high}")
    spec = QuerySpec(name=args.text or "embedding",
                     g_qry=g_qry,
                     canonicals=_canonical_vectors(bank, codec.d_high),
                     threshold=float(resolved["threshold"]))
    _, cams = _cameras_for(args, resolved)
    settings = RenderSettings()
    _write_resolved({**resolved, "scene": args.scene, "query": spec.name},
                    args.outdir)

    import csv as _csv

    means = []
    with open(os.path.join(args.outdir, "query_summary.csv"), "w",
              newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["pose", "mean_relevance", "mask_fraction"])
        for i, cam in enumerate(cams):
            out = render(scene, cam, settings)
            rel = relevance_map(out.feat, codec, spec)
            mask = query_mask(out.feat, codec, spec, out.acc_opacity)
            stem = os.path.join(args.outdir, f"{i:03d}")
            save_gray_png(rel, f"{stem}_heatmap.png")
            save_tensor(rel, f"{stem}_relevance.ogt")
            save_gray_png(mask.astype(np.float64), f"{stem}_mask.png")
            writer.writerow([i, f"{rel.mean():.6f}", f"{mask.mean():.6f}"])
            means.append(rel.mean())
    figures.iou_bar_figure([str(i) for i in range(len(means))], means,
                           os.path.join(args.outdir, "query_relevance.png"),
                           title=f"mean relevance per pose: {spec.name}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config_file(args.config)
    defaults = {"n_poses": 16, "seed": 0, "threshold": 0.5,
                "extrapolated_gate": 0.3, "valid_gate": 0.01,
                "full_image": False}
    resolved = _resolve(args, config, defaults)
    scene = load_scene(_require_file(args.scene, "scene file"))
    initial = load_scene(_require_file(args.initial, "initial scene file"))
    codec = load_codec(_require_file(args.codec, "codec file"))
    bank = load_bank(_require_file(args.bank, "bank file"))
    base = _load_camera(args.camera)
    n_poses = int(resolved["n_poses"])
    gt_maps, labels = load_gt_labels(
        _require_file(args.gt, "ground-truth directory"), n_poses)
    _write_resolved({**resolved, "scene": args.scene, "gt": args.gt},
                    args.outdir)

    canonicals = _canonical_vectors(bank, codec.d_high)
    missing = [n for n in labels if n not in bank.names]
    if missing:
        raise RangeError(f"bank lacks vectors for categories: {missing}")
    queries = [QuerySpec(name=n,
                         g_qry=bank.vectors[bank.names.index(n)],
                         canonicals=canonicals,
                         threshold=float(resolved["threshold"]))
               for n in labels]
    gates = EvalGates(extrapolated_gate=float(resolved["extrapolated_gate"]),
                      valid_gate=float(resolved["valid_gate"]))
    try:
        report, rows = evaluate(
            scene, initial, base, codec, queries, gt_maps, labels,
            gates=gates, n_poses=n_poses,
            restrict_to_extrapolated=not resolved["full_image"])
    except AllExcluded as exc:
        print(f"warning: {exc}", file=sys.stderr)
        return EXIT_OK
    write_report(report, rows, args.outdir)
    print(json.dumps({"miou": report["miou"],
                      "n_images": report["n_images"]}))
    return EXIT_OK


def cmd_fit_codec(args) -> int:
    config = _load_config_file(args.config)
    defaults = {"iters": 300, "lr": 1e-3, "seed": 0}
    resolved = _resolve(args, config, defaults)
    path = _require_file(args.features, "feature file")
    if path.endswith(".npy"):
        feats = np.load(path)
    else:
        t = load_tensor(path)
        feats = t.reshape(-1, t.shape[-1])
    codec = fit_codec(np.asarray(feats, dtype=np.float64),
                      iters=int(resolved["iters"]), lr=float(resolved["lr"]))
    _write_resolved({**resolved, "features": args.features}, args.outdir)
    save_codec(codec, os.path.join(args.outdir, "codec.ogc"))

    from .codec import decode as _dec, encode as _enc

    x = np.asarray(feats, dtype=np.float64)
    r = _dec(codec, _enc(codec, x))
    nx = np.linalg.norm(x, axis=1)
    nr = np.maximum(np.linalg.norm(r, axis=1), 1e-30)
    keep = nx > 0
    cos = np.sum(x[keep] * r[keep], axis=1) / (nx[keep] * nr[keep])
    import csv as _csv

    with open(os.path.join(args.outdir, "fit_summary.csv"), "w",
              newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["n_features", "d_high", "fit_cosine", "min_cosine"])
        writer.writerow([feats.shape[0], feats.shape[1],
                         f"{codec.fit_cosine:.8f}", f"{cos.min():.8f}"])
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(cos, bins=50, color="#4878a8")
    ax.set_xlabel("reconstruction cosine")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(os.path.join(args.outdir, "fit_cosine.png"), dpi=120)
    plt.close(fig)
    print(json.dumps({"fit_cosine": codec.fit_cosine}))
    return EXIT_OK


def cmd_export_ply(args) -> int:
    scene = load_scene(_require_file(args.scene, "scene file"))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    export_ply(scene, args.out)
    print(json.dumps({"primitives": scene.n, "path": args.out}))
    return EXIT_OK


def cmd_demo(args) -> int:
    """Self-contained synthetic inputs: initial scene, context views, codec,
    bank, base camera, and ground-truth labels for the eval pipeline."""
    size = int(args.size)
    out = args.outdir
    os.makedirs(out, exist_ok=True)
    truth = synthetic.box_scene(points_per_face=int(args.points_per_face),
                                seed=int(args.seed))
    cams = synthetic.context_cameras(size, size, focal=0.8 * size)
    settings = RenderSettings()
    ctx = synthetic.render_context(truth, cams, settings)
    initial = synthetic.wedge_subset(truth, cams)

    save_scene(truth, os.path.join(out, "truth.ogs"))
    save_scene(initial, os.path.join(out, "initial.ogs"))
    ctx_dir = os.path.join(out, "context")
    os.makedirs(ctx_dir, exist_ok=True)
    for i, view in enumerate(ctx):
        with open(os.path.join(ctx_dir, f"camera_{i:03d}.json"), "w") as fh:
            json.dump(view.cam.to_dict(), fh, indent=2)
        save_tensor(view.rgb, os.path.join(ctx_dir, f"rgb_{i:03d}.ogt"))
        save_tensor(view.feat, os.path.join(ctx_dir, f"feat_{i:03d}.ogt"))
    save_codec(synthetic.toy_codec(), os.path.join(out, "codec.ogc"))
    bank = synthetic.toy_bank()
    save_bank(bank, os.path.join(out, "bank.tsv"))
    with open(os.path.join(out, "base_camera.json"), "w") as fh:
        json.dump(cams[0].to_dict(), fh, indent=2)

    # ground truth at the benchmark poses, labeled by nearest face feature
    gt_dir = os.path.join(out, "gt")
    os.makedirs(gt_dir, exist_ok=True)
    labels = {name: i + 1 for i, name in enumerate(synthetic.FACE_NAMES)}
    with open(os.path.join(gt_dir, "labels.json"), "w") as fh:
        json.dump(labels, fh, indent=2)
    dirs = synthetic.face_feature_directions()
    from .tensorio import save_label_png

    for pi, cam in enumerate(go_poses(cams[0], int(args.n_poses))):
        view = render(truth, cam, settings)
        sims = np.einsum("hwc,kc->hwk", view.feat, dirs)
        lab = np.argmax(sims, axis=2) + 1
        lab[view.acc_opacity < 0.5] = 0
        save_label_png(lab, os.path.join(gt_dir, f"label_{pi:03d}.png"))
    print(json.dumps({"outdir": out, "truth": truth.n, "initial": initial.n}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatgrow",
        description="Semantic Gaussian scene growing, rendering, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outdir=True):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None)
        if outdir:
            p.add_argument("--outdir", required=True)

    p = sub.add_parser("render", help="render a scene to image/tensor files")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", help="camera JSON file")
    p.add_argument("--poses", choices=["single", "go"], default=None)
    p.add_argument("--n-poses", dest="n_poses", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--focal", type=float, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("grow", help="run the progressive growth loop")
    common(p)
    p.add_argument("--scene", required=True, help="initial scene (OGS)")
    p.add_argument("--context", required=True, help="context view directory")
    p.add_argument("--adapter", default=None,
                   help="adapter command line, or 'stub' (default: "
                        f"${ADAPTER_ENV} if set, else stub)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--codec", default=None)
    p.add_argument("--bank", default=None)
    p.add_argument("--continue-on-abort", dest="continue_on_abort",
                   action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("query", help="render open-vocabulary relevance maps")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--text", default=None)
    p.add_argument("--embedding", default=None, help=".npy query vector")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--camera", help="camera JSON file")
    p.add_argument("--poses", choices=["single", "go"], default=None)
    p.add_argument("--n-poses", dest="n_poses", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--focal", type=float, default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score queries against ground truth")
    common(p)
    p.add_argument("--scene", required=True, help="evaluated scene (OGS)")
    p.add_argument("--initial", required=True, help="initial scene (OGS)")
    p.add_argument("--codec", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--camera", required=True, help="base camera JSON")
    p.add_argument("--gt", required=True, help="ground-truth directory")
    p.add_argument("--n-poses", dest="n_poses", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--full-image", dest="full_image", action="store_const",
                   const=True, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-codec", help="fit the semantic codec to features")
    common(p)
    p.add_argument("--features", required=True, help=".npy (n,d) or .ogt")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_fit_codec)

    p = sub.add_parser("export-ply", help="write the community PLY layout")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("demo", help="generate synthetic demo inputs")
    p.add_argument("--outdir", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--points-per-face", dest="points_per_face", type=int,
                   default=400)
    p.add_argument("--n-poses", dest="n_poses", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)
    return parser


def _emit_error(exc: Exception, code: int) -> None:
    print(f"error: {exc}", file=sys.stderr)
    print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                      "exit_code": code}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _emit_error(exc, EXIT_INPUT)
        return EXIT_INPUT
    except AdapterFailure as exc:
        _emit_error(exc, EXIT_ADAPTER)
        return EXIT_ADAPTER
    except OSError as exc:
        _emit_error(exc, EXIT_INPUT)
        return EXIT_INPUT
    except SplatgrowError as exc:
        _emit_error(exc, EXIT_INTERNAL)
        return EXIT_INTERNAL
    except Exception as exc:  # jsonschema failures, bugs: internal
        _emit_error(exc, EXIT_INTERNAL)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
