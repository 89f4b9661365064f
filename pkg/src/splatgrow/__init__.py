"""splatgrow: semantic-aware Gaussian scene reconstruction, rendering, and
progressive open-vocabulary growth.

The package keeps all neural heavy lifting behind a line-delimited JSON
wire protocol; everything in-process is deterministic numpy/numba.
"""

from .bridge import (AdapterFailure, FileDepthAdapter, InpaintJob,
                     InpaintResult, ProcessAdapter, StubAdapter, fetch_depth,
                     fetch_text_embedding, inpaint)
from .cameras import Camera
from .codec import (CategoryBank, SemanticCodec, classify, decode, encode,
                    fit_codec, load_bank, load_codec, save_bank, save_codec,
                    semantic_loss)
from .edgeprompt import EdgeBand, build_prompt, edge_categories, extract_edge
from .errors import InputError, SplatgrowError
from .evaluator import (CANONICAL_PHRASES, EXCLUDED, EvalGates, QuerySpec,
                        evaluate, extrapolated_region, go_poses, iou,
                        majority_vote, miou, query_mask, relevance,
                        relevance_map, write_report)
from .gaussians import Gaussian, GaussianScene, SEM_DIM
from .grower import (AnchorSchedule, GrowConfig, GrowthState, compute_beta,
                     grow, lift_points, rotate_camera, spawn_gaussians)
from .optimizer import (LossWeights, OptimConfig, SupervisionView, backward,
                        feat_loss, l1_loss, optimize, ssim_loss, total_loss)
from .renderer import (InpaintMask, RenderOutput, RenderSettings,
                       compute_mask, project_gaussian, render,
                       render_backward)
from .sceneio import export_ply, load_scene, save_scene
from .tensorio import load_tensor, save_png, save_tensor

__version__ = "0.1.0"

__all__ = [
    "AdapterFailure", "AnchorSchedule", "CANONICAL_PHRASES", "Camera",
    "CategoryBank", "EXCLUDED", "EdgeBand", "EvalGates", "FileDepthAdapter",
    "Gaussian", "GaussianScene", "GrowConfig", "GrowthState", "InpaintJob",
    "InpaintMask", "InpaintResult", "InputError", "LossWeights",
    "OptimConfig", "ProcessAdapter", "QuerySpec", "RenderOutput",
    "RenderSettings", "SEM_DIM", "SemanticCodec", "SplatgrowError",
    "StubAdapter", "SupervisionView", "backward", "build_prompt", "classify",
    "compute_beta", "compute_mask", "decode", "edge_categories", "encode",
    "evaluate", "export_ply", "extract_edge", "extrapolated_region",
    "feat_loss", "fetch_depth", "fetch_text_embedding", "fit_codec",
    "go_poses", "grow", "inpaint", "iou", "l1_loss", "lift_points",
    "load_bank", "load_codec", "load_scene", "load_tensor", "majority_vote",
    "miou", "optimize", "project_gaussian", "query_mask", "relevance",
    "relevance_map", "render", "render_backward", "rotate_camera",
    "save_bank", "save_codec", "save_png", "save_scene", "save_tensor",
    "semantic_loss", "spawn_gaussians", "ssim_loss", "total_loss",
    "write_report",
]
