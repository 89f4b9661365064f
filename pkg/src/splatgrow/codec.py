"""Linear autoencoder between the vision-language embedding space and the
16-d per-Gaussian semantic space, plus the category bank used to turn
features back into names.

The fit is a PCA warm start refined by Adam on the mean cosine
reconstruction error. For feature sets living in (or near) a 16-d subspace
the warm start alone is already lossless; the refinement matters for messier
in-the-wild embeddings.
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (DegenerateData, DimensionMismatch, FormatError,
                     RangeError, ShapeMismatch, ZeroVector)
from .gaussians import SEM_DIM

MAGIC = b"OGC1"
_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True)
class SemanticCodec:
    enc_w: np.ndarray          # (16, d_high)
    enc_b: np.ndarray          # (16,)
    dec_w: np.ndarray          # (d_high, 16)
    dec_b: np.ndarray          # (d_high,)
    fit_cosine: Optional[float] = None   # mean train cosine, when fitted

    def __post_init__(self):
        for name in ("enc_w", "enc_b", "dec_w", "dec_b"):
            object.__setattr__(self, name,
                               np.ascontiguousarray(getattr(self, name),
                                                    dtype=np.float64))
        d = self.enc_w.shape[1] if self.enc_w.ndim == 2 else -1
        ok = (self.enc_w.shape == (SEM_DIM, d) and self.enc_b.shape == (SEM_DIM,)
              and self.dec_w.shape == (d, SEM_DIM) and self.dec_b.shape == (d,))
        if not ok or d < 1:
            raise RangeError("codec matrices have inconsistent shapes")

    @property
    def d_high(self) -> int:
        return self.enc_w.shape[1]

    @classmethod
    def identity(cls) -> "SemanticCodec":
        """d_high = 16 passthrough codec."""
        eye = np.eye(SEM_DIM)
        return cls(enc_w=eye, enc_b=np.zeros(SEM_DIM),
                   dec_w=eye.copy(), dec_b=np.zeros(SEM_DIM))


@dataclass(frozen=True)
class CategoryBank:
    names: tuple
    vectors: np.ndarray        # (k, d_high)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vecs)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.names):
            raise RangeError("bank vectors must be (len(names), d_high)")
        if len(set(self.names)) != len(self.names):
            raise RangeError("bank names must be unique")
        if not np.all(np.linalg.norm(vecs, axis=1) > 0):
            raise RangeError("bank vectors must have nonzero norm")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def d_high(self) -> int:
        return self.vectors.shape[1]


class Classification(NamedTuple):
    name: str
    cosine: float


class SemanticLossResult(NamedTuple):
    total: float          # sum of (1 - cos) over included pixels
    mean: float           # same, averaged (0 when nothing is included)
    n_included: int


def encode(codec: SemanticCodec, g: np.ndarray) -> np.ndarray:
    """Affine down-projection; accepts (..., d_high) batches."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != codec.d_high:
        raise DimensionMismatch(
            f"encode expects last dim {codec.d_high}, got {g.shape[-1]}")
    return g @ codec.enc_w.T + codec.enc_b


def decode(codec: SemanticCodec, f: np.ndarray) -> np.ndarray:
    """Affine up-projection; accepts (..., 16) batches."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != SEM_DIM:
        raise DimensionMismatch(f"decode expects last dim {SEM_DIM}, got {f.shape[-1]}")
    return f @ codec.dec_w.T + codec.dec_b


def reconstruction_cosine(codec: SemanticCodec, x: np.ndarray) -> float:
    """Mean cos(x, dec(enc(x))) over rows; zero-norm rows are skipped."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, codec.d_high)
    r = decode(codec, encode(codec, x))
    nx = np.linalg.norm(x, axis=1)
    nr = np.linalg.norm(r, axis=1)
    keep = nx > 0
    if not keep.any():
        raise DegenerateData("no nonzero feature rows")
    cos = np.sum(x[keep] * r[keep], axis=1) / (nx[keep] * np.maximum(nr[keep], 1e-30))
    return float(cos.mean())


def fit_codec(features: np.ndarray, iters: int = 300, lr: float = 1e-3) -> SemanticCodec:
    """Fit the codec to (n, d_high) feature rows.

    Raises DegenerateData when the rows span fewer than 16 dimensions.
    The returned codec records the achieved mean train cosine in fit_cosine.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < SEM_DIM:
        raise DegenerateData(
            f"need at least {SEM_DIM} feature rows, got {x.shape}")
    x = x[np.linalg.norm(x, axis=1) > 0]
    if np.linalg.matrix_rank(x) < SEM_DIM:
        raise DegenerateData("feature matrix rank < 16")
    d_high = x.shape[1]

    mu = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mu, full_matrices=False)
    basis = vt[:SEM_DIM] if d_high > SEM_DIM else np.eye(SEM_DIM)
    enc_w = basis.copy()
    enc_b = -basis @ mu
    dec_w = basis.T.copy()
    dec_b = mu.copy()

    params = [enc_w, enc_b, dec_w, dec_b]
    m_t = [np.zeros_like(p) for p in params]
    v_t = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n = x.shape[0]
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    xhat = x / nx

    for step in range(1, iters + 1):
        f = x @ enc_w.T + enc_b
        r = f @ dec_w.T + dec_b
        nr = np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-30)
        rhat = r / nr
        cos = np.sum(xhat * rhat, axis=1, keepdims=True)
        dr = -(xhat - rhat * cos) / (nr * n)      # d mean(1-cos) / dr
        g_dec_w = dr.T @ f
        g_dec_b = dr.sum(axis=0)
        df = dr @ dec_w
        g_enc_w = df.T @ x
        g_enc_b = df.sum(axis=0)
        for p, g, m, v in zip(params, (g_enc_w, g_enc_b, g_dec_w, g_dec_b), m_t, v_t):
            m += (1 - beta1) * (g - m)
            v += (1 - beta2) * (g * g - v)
            mh = m / (1 - beta1 ** step)
            vh = v / (1 - beta2 ** step)
            p -= lr * mh / (np.sqrt(vh) + eps)

    codec = SemanticCodec(enc_w=enc_w, enc_b=enc_b, dec_w=dec_w, dec_b=dec_b)
    achieved = reconstruction_cosine(codec, x)
    return SemanticCodec(enc_w=enc_w, enc_b=enc_b, dec_w=dec_w, dec_b=dec_b,
                         fit_cosine=achieved)


def classify(codec: SemanticCodec, f: np.ndarray, bank: CategoryBank) -> Classification:
    """Decode a 16-d feature and name it by argmax cosine over the bank.

    Exact ties go to the lowest bank index.
    """
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.shape != (SEM_DIM,):
        raise DimensionMismatch(f"classify expects a {SEM_DIM}-vector, got {f.shape}")
    if np.linalg.norm(f) < 1e-12:
        raise ZeroVector("cannot classify a zero feature")
    if bank.d_high != codec.d_high:
        raise DimensionMismatch(
            f"bank dimension {bank.d_high} != codec d_high {codec.d_high}")
    g = decode(codec, f)
    cos = _bank_cosines(g, bank)
    idx = int(np.argmax(cos))
    return Classification(name=bank.names[idx], cosine=float(cos[idx]))


def _bank_cosines(g: np.ndarray, bank: CategoryBank) -> np.ndarray:
    """cos between rows of g (..., d_high) and every bank vector -> (..., k)."""
    bn = bank.vectors / np.linalg.norm(bank.vectors, axis=1, keepdims=True)
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    return (g @ bn.T) / np.maximum(gn, 1e-30)


def semantic_loss(f_pred: np.ndarray, f_tgt: np.ndarray) -> SemanticLossResult:
    """Per-pixel cosine dissimilarity, summed over pixels whose target
    feature is nonzero (zero-target pixels carry no supervision)."""
    f_pred = np.asarray(f_pred, dtype=np.float64)
    f_tgt = np.asarray(f_tgt, dtype=np.float64)
    if f_pred.shape != f_tgt.shape:
        raise ShapeMismatch(f"shape mismatch {f_pred.shape} vs {f_tgt.shape}")
    if f_pred.shape[-1] != SEM_DIM:
        raise ShapeMismatch(f"feature maps must end in {SEM_DIM} channels")
    p = f_pred.reshape(-1, SEM_DIM)
    t = f_tgt.reshape(-1, SEM_DIM)
    nt = np.linalg.norm(t, axis=1)
    keep = nt > 0
    n_inc = int(keep.sum())
    if n_inc == 0:
        return SemanticLossResult(total=0.0, mean=0.0, n_included=0)
    npred = np.maximum(np.linalg.norm(p[keep], axis=1), 1e-30)
    cos = np.sum(p[keep] * t[keep], axis=1) / (npred * nt[keep])
    terms = 1.0 - cos
    return SemanticLossResult(total=float(terms.sum()),
                              mean=float(terms.mean()), n_included=n_inc)


def save_codec(codec: SemanticCodec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, codec.d_high))
        for arr in (codec.enc_w, codec.enc_b, codec.dec_w, codec.dec_b):
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_codec(path) -> SemanticCodec:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, d_high = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    sizes = (SEM_DIM * d_high, SEM_DIM, d_high * SEM_DIM, d_high)
    if len(raw) != _HEADER.size + 4 * sum(sizes):
        raise FormatError(f"{path}: payload size mismatch for d_high={d_high}")
    vals = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    out, pos = [], 0
    for size in sizes:
        out.append(vals[pos:pos + size])
        pos += size
    return SemanticCodec(enc_w=out[0].reshape(SEM_DIM, d_high), enc_b=out[1],
                         dec_w=out[2].reshape(d_high, SEM_DIM), dec_b=out[3])


def save_bank(bank: CategoryBank, path) -> None:
    lines = []
    for name, vec in zip(bank.names, bank.vectors):
        if "\t" in name or "\n" in name:
            raise RangeError(f"bank name {name!r} contains tab/newline")
        payload = base64.b64encode(vec.astype("<f4").tobytes()).decode("ascii")
        lines.append(f"{name}\t{payload}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_bank(path) -> CategoryBank:
    names, rows = [], []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{ln}: expected name<TAB>base64 payload")
        try:
            vec = np.frombuffer(base64.b64decode(parts[1], validate=True),
                                dtype="<f4").astype(np.float64)
        except Exception as exc:
            raise FormatError(f"{path}:{ln}: bad base64 payload: {exc}") from exc
        names.append(parts[0])
        rows.append(vec)
    if not rows:
        raise FormatError(f"{path}: empty bank")
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise FormatError(f"{path}: inconsistent vector dimensions {sorted(dims)}")
    return CategoryBank(names=tuple(names), vectors=np.stack(rows))
