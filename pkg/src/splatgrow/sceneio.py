"""Scene persistence.

"OGS v1" is a little-endian binary: magic ``OGS1``, u32 primitive count,
u32 d_color, then per-primitive float32 records
``p(3) p_delta(3) q(4) s(3) alpha(1) sh(3*d_color) f(16)``.

``export_ply`` writes the community Gaussian-splat PLY layout for viewers
(log scales, logit opacities, DC color coefficients); the 16 semantic
channels ride along as extra float properties ``sem_0..sem_15``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, RangeError
from .gaussians import SEM_DIM, SH_DEGREE, GaussianScene

MAGIC = b"OGS1"
_HEADER = struct.Struct("<4sII")


def _record_width(d_color: int) -> int:
    return 3 + 3 + 4 + 3 + 1 + 3 * d_color + SEM_DIM


def save_scene(scene: GaussianScene, path) -> None:
    path = Path(path)
    n, d = scene.n, scene.d_color
    flat = np.concatenate([
        scene.p, scene.p_delta, scene.q, scene.s,
        scene.alpha[:, None], scene.sh.reshape(n, 3 * d), scene.f,
    ], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, d))
        fh.write(flat.tobytes(order="C"))


def load_scene(path) -> GaussianScene:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if d not in SH_DEGREE:
        raise FormatError(f"{path}: unsupported d_color {d}")
    width = _record_width(d)
    body = raw[_HEADER.size:]
    if len(body) != 4 * n * width:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {4 * n * width}")
    flat = np.frombuffer(body, dtype="<f4").reshape(n, width).astype(np.float64)
    o = 0
    def take(k):
        nonlocal o
        out = flat[:, o:o + k]
        o += k
        return out
    p, p_delta, q, s = take(3), take(3), take(4), take(3)
    alpha = take(1)[:, 0]
    sh = take(3 * d).reshape(n, 3, d)
    f = take(SEM_DIM)
    try:
        return GaussianScene(p, p_delta, q, s, alpha, sh, f,
                             frame_note="normalized to first context view")
    except RangeError as exc:
        raise RangeError(f"{path}: {exc}") from exc


def export_ply(scene: GaussianScene, path) -> None:
    """Write the viewer-compatible splat PLY (binary little-endian)."""
    n, d = scene.n, scene.d_color
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (d - 1))]
    names += ["opacity"] + [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    names += [f"sem_{i}" for i in range(SEM_DIM)]

    mu = scene.centers()
    cols = [mu, np.zeros((n, 3)), scene.sh[:, :, 0]]
    if d > 1:
        # channel-major rest coefficients, as viewers expect
        cols.append(scene.sh[:, :, 1:].reshape(n, 3 * (d - 1)))
    logit = np.log(scene.alpha) - np.log1p(-scene.alpha)
    cols += [logit[:, None], np.log(scene.s), scene.q, scene.f]
    data = np.concatenate(cols, axis=1).astype("<f4")

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes(order="C"))
