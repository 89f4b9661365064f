"""Adapter bridge to the inpainting / depth / text-embedding models.

Adapters speak the wire protocol at the JSON level (tensors encoded), whether
they run in-process (StubAdapter, deterministic, for tests and CI) or as an
external process (ProcessAdapter, for the real model sidecar). The bridge
owns the pipeline semantics: RGB inpainting runs first, the semantic call is
conditioned on the inpainted image, and known-region preservation is enforced
here by overwriting mask-0 pixels with the inputs no matter what an adapter
returned.
"""

from __future__ import annotations

import hashlib
import os
import select
import shlex
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import protocol
from .errors import AdapterFailure, AllMasked, NonPositiveDepth, RangeError, ShapeMismatch
from .gaussians import SEM_DIM


@dataclass(frozen=True)
class InpaintJob:
    rgb: np.ndarray        # (H, W, 3)
    feat: np.ndarray       # (H, W, 16)
    mask: np.ndarray       # (H, W), 1 = fill me
    prompt: str
    seed: int = 0

    def __post_init__(self):
        rgb = np.ascontiguousarray(self.rgb, dtype=np.float64)
        feat = np.ascontiguousarray(self.feat, dtype=np.float64)
        mask = np.ascontiguousarray(self.mask)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ShapeMismatch(f"rgb must be HxWx3, got {rgb.shape}")
        h, w = rgb.shape[:2]
        if feat.shape != (h, w, SEM_DIM):
            raise ShapeMismatch(f"feat must be {(h, w, SEM_DIM)}, got {feat.shape}")
        if mask.shape != (h, w):
            raise ShapeMismatch(f"mask must be {(h, w)}, got {mask.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise RangeError("mask must be binary")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "feat", feat)
        object.__setattr__(self, "mask", mask.astype(np.uint8))


@dataclass(frozen=True)
class InpaintResult:
    rgb_inp: np.ndarray
    feat_inp: np.ndarray
    depth_inp: Optional[np.ndarray] = None


def _nearest_known_fill(mask: np.ndarray, *maps):
    """Fill mask-1 pixels of each map from the Euclidean-nearest mask-0 pixel.

    Ties are broken by the smallest (h, w) source, compared in exact integer
    squared distance. Returns filled copies.
    """
    missing = mask.astype(bool)
    known = np.argwhere(~missing)
    if known.shape[0] == 0:
        raise AllMasked("mask covers the whole image; nothing to copy from")
    outs = [np.array(m, dtype=np.float64, copy=True) for m in maps]
    holes = np.argwhere(missing)
    if holes.shape[0] == 0:
        return outs
    tree = cKDTree(known)
    dist, _ = tree.query(holes)
    candidates = tree.query_ball_point(holes, dist + 1e-6)
    src = np.empty((holes.shape[0], 2), dtype=np.int64)
    for i, cand in enumerate(candidates):
        h, w = holes[i]
        best = None
        for j in cand:
            kh, kw = known[j]
            key = (int(kh - h) ** 2 + int(kw - w) ** 2, int(kh), int(kw))
            if best is None or key < best:
                best = key
        src[i] = best[1], best[2]
    for out in outs:
        out[holes[:, 0], holes[:, 1]] = out[src[:, 0], src[:, 1]]
    return outs


def stub_fill(job: InpaintJob, depth: Optional[np.ndarray] = None) -> InpaintResult:
    """Deterministic, seed-independent inpainting stand-in: every hole takes
    the rgb/feat (and depth, when given) of its nearest known pixel."""
    maps = [job.rgb, job.feat]
    if depth is not None:
        maps.append(np.asarray(depth, dtype=np.float64))
    filled = _nearest_known_fill(job.mask, *maps)
    return InpaintResult(rgb_inp=filled[0], feat_inp=filled[1],
                         depth_inp=filled[2] if depth is not None else None)


def stub_depth_map(rgb: np.ndarray) -> np.ndarray:
    """Synthetic strictly positive depth: a constant plus image-plane
    gradients plus a luminance term, so it varies but stays predictable."""
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = rgb.shape[:2]
    u = np.arange(w, dtype=np.float64) / max(w - 1, 1)
    v = np.arange(h, dtype=np.float64) / max(h - 1, 1)
    luma = np.clip(rgb.mean(axis=2), 0.0, 1.0)
    return 2.0 + 0.6 * u[None, :] + 0.4 * v[:, None] + 0.3 * luma


def stub_text_embedding(text: str, dim: int) -> np.ndarray:
    """Unit vector derived from a hash of the string; stable across runs."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class StubAdapter:
    """In-process adapter with deterministic handlers, speaking the same
    JSON-level interface as an external process."""

    def call(self, method: str, params: dict) -> dict:
        try:
            if method == "inpaint_rgb":
                rgb = protocol.decode_tensor(params["rgb"])
                mask = protocol.decode_tensor(params["mask"])
                filled, = _nearest_known_fill(np.round(mask).astype(np.uint8), rgb)
                return {"rgb": protocol.encode_tensor(filled)}
            if method == "inpaint_sem":
                feat = protocol.decode_tensor(params["feat"])
                mask = protocol.decode_tensor(params["mask"])
                filled, = _nearest_known_fill(np.round(mask).astype(np.uint8), feat)
                return {"feat": protocol.encode_tensor(filled)}
            if method == "depth":
                rgb = protocol.decode_tensor(params["rgb"])
                return {"depth": protocol.encode_tensor(stub_depth_map(rgb))}
            if method == "embed_text":
                vec = stub_text_embedding(str(params["text"]), int(params["dim"]))
                return {"vector": protocol.encode_tensor(vec)}
            if method == "fid":
                return {"fid": -1.0}
        except AllMasked:
            raise
        except Exception as exc:
            raise AdapterFailure(f"stub handler {method} failed: {exc}") from exc
        raise AdapterFailure(f"stub adapter has no method {method!r}")

    def close(self):
        pass


class FileDepthAdapter:
    """Serves precomputed depth maps; anything else falls through to an
    optional inner adapter."""

    def __init__(self, depth: np.ndarray, fallback=None):
        self.depth = np.asarray(depth, dtype=np.float64)
        self.fallback = fallback

    def call(self, method: str, params: dict) -> dict:
        if method == "depth":
            return {"depth": protocol.encode_tensor(self.depth)}
        if self.fallback is not None:
            return self.fallback.call(method, params)
        raise AdapterFailure(f"file depth adapter cannot handle {method!r}")

    def close(self):
        if self.fallback is not None:
            self.fallback.close()


class _StderrDrain(threading.Thread):
    """Keeps the child's stderr from blocking and remembers the tail."""

    def __init__(self, stream, max_bytes=16384):
        super().__init__(daemon=True)
        self.stream = stream
        self.chunks = deque()
        self.size = 0
        self.max_bytes = max_bytes
        self.lock = threading.Lock()

    def run(self):
        for chunk in iter(lambda: self.stream.read(4096), b""):
            with self.lock:
                self.chunks.append(chunk)
                self.size += len(chunk)
                while self.size > self.max_bytes and len(self.chunks) > 1:
                    self.size -= len(self.chunks.popleft())

    def tail(self) -> str:
        with self.lock:
            return b"".join(self.chunks).decode("utf-8", errors="replace")


class ProcessAdapter:
    """Spawns the sidecar command and speaks the wire protocol over its
    stdio, one request in flight at a time. A failed call restarts the
    process and retries once (configurable)."""

    def __init__(self, cmd, timeout: float = 300.0, retries: int = 1):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.proc = None
        self.drain = None
        self.next_id = 0
        self.lock = threading.Lock()

    def _ensure_proc(self):
        if self.proc is not None and self.proc.poll() is None:
            return
        try:
            self.proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, bufsize=0)
        except OSError as exc:
            raise AdapterFailure(
                f"failed to spawn adapter {self.cmd!r}: {exc}") from exc
        self.drain = _StderrDrain(self.proc.stderr)
        self.drain.start()

    def _shutdown(self):
        if self.proc is None:
            return
        try:
            self.proc.kill()
            self.proc.wait(timeout=5)
        except Exception:
            pass
        self.proc = None

    def _read_line(self, deadline: float) -> bytes:
        buf = bytearray()
        fd = self.proc.stdout.fileno()
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise AdapterFailure("adapter timed out",
                                     transcript=self.drain.tail())
            ready, _, _ = select.select([fd], [], [], min(remaining, 1.0))
            if not ready:
                if self.proc.poll() is not None:
                    raise AdapterFailure(
                        f"adapter exited with code {self.proc.returncode}",
                        transcript=self.drain.tail())
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise AdapterFailure(
                    "adapter closed stdout"
                    + (f" (exit code {self.proc.returncode})"
                       if self.proc.poll() is not None else ""),
                    transcript=self.drain.tail())
            buf.extend(chunk)
            nl = buf.find(b"\n")
            if nl >= 0:
                if nl != len(buf) - 1:
                    raise AdapterFailure("adapter sent more than one reply line",
                                         transcript=self.drain.tail())
                return bytes(buf[:nl])

    def _call_once(self, method: str, params: dict) -> dict:
        self._ensure_proc()
        req_id = self.next_id
        self.next_id += 1
        line = protocol.encode_message(protocol.make_request(req_id, method, params))
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterFailure(f"adapter stdin write failed: {exc}",
                                 transcript=self.drain.tail()) from exc
        reply = self._read_line(time.monotonic() + self.timeout)
        try:
            obj = protocol.decode_message(reply)
        except Exception as exc:
            raise AdapterFailure(
                f"malformed adapter reply: {exc}",
                transcript=reply.decode("utf-8", "replace")[:2000]) from exc
        if obj.get("id") != req_id:
            raise AdapterFailure(
                f"adapter reply id {obj.get('id')} != request id {req_id}",
                transcript=reply.decode("utf-8", "replace")[:2000])
        if "error" in obj:
            err = obj["error"]
            raise AdapterFailure(
                f"adapter error {err.get('code')}: {err.get('message')}",
                transcript=self.drain.tail())
        if "result" not in obj or not isinstance(obj["result"], dict):
            raise AdapterFailure("adapter reply carries no result",
                                 transcript=reply.decode("utf-8", "replace")[:2000])
        return obj["result"]

    def call(self, method: str, params: dict) -> dict:
        with self.lock:
            failure = None
            for attempt in range(self.retries + 1):
                try:
                    return self._call_once(method, params)
                except AdapterFailure as exc:
                    failure = exc
                    self._shutdown()
            raise failure

    def close(self):
        with self.lock:
            if self.proc is not None and self.proc.poll() is None:
                try:
                    self.proc.stdin.close()
                    self.proc.wait(timeout=5)
                except Exception:
                    pass
            self._shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _decoded_map(result: dict, key: str, shape) -> np.ndarray:
    try:
        arr = protocol.decode_tensor(result[key])
    except Exception as exc:
        raise AdapterFailure(f"adapter result missing/invalid {key!r}: {exc}") from exc
    if arr.shape != shape:
        raise AdapterFailure(
            f"adapter returned {key} with shape {arr.shape}, expected {shape}")
    return arr


def inpaint(adapter, job: InpaintJob) -> InpaintResult:
    """RGB inpainting, then semantic inpainting conditioned on the result,
    with known-region preservation applied on top of both replies."""
    h, w = job.mask.shape
    if not job.mask.any():
        return InpaintResult(rgb_inp=job.rgb.copy(), feat_inp=job.feat.copy())
    mask_t = protocol.encode_tensor(job.mask.astype(np.float64))
    rgb_res = adapter.call("inpaint_rgb", {
        "rgb": protocol.encode_tensor(job.rgb), "mask": mask_t,
        "prompt": job.prompt, "seed": int(job.seed)})
    rgb_inp = _decoded_map(rgb_res, "rgb", (h, w, 3))
    known = job.mask == 0
    rgb_inp[known] = job.rgb[known]

    sem_res = adapter.call("inpaint_sem", {
        "feat": protocol.encode_tensor(job.feat), "mask": mask_t,
        "prompt": job.prompt, "seed": int(job.seed),
        "control_rgb": protocol.encode_tensor(rgb_inp)})
    feat_inp = _decoded_map(sem_res, "feat", (h, w, SEM_DIM))
    feat_inp[known] = job.feat[known]
    return InpaintResult(rgb_inp=rgb_inp, feat_inp=feat_inp)


def fetch_depth(adapter, rgb: np.ndarray) -> np.ndarray:
    """Depth for an (inpainted) image; must be strictly positive."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"rgb must be HxWx3, got {rgb.shape}")
    result = adapter.call("depth", {"rgb": protocol.encode_tensor(rgb)})
    depth = _decoded_map(result, "depth", rgb.shape[:2])
    if not (depth > 0).all():
        raise NonPositiveDepth(
            f"adapter depth contains non-positive values (min {depth.min():.4g})")
    return depth


def fetch_text_embedding(adapter, text: str, dim: int) -> np.ndarray:
    result = adapter.call("embed_text", {"text": str(text), "dim": int(dim)})
    vec = _decoded_map(result, "vector", (int(dim),))
    return vec
