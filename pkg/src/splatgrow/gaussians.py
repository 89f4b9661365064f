"""Semantic Gaussian primitives and the scene container.

A primitive is an anisotropic 3D Gaussian with appearance (spherical
harmonics), opacity, and a 16-d semantic feature vector. The scene is a
structure-of-arrays container over float64; the on-disk format is float32
(see sceneio).

Conventions: quaternions are scalar-first (w, x, y, z); the world frame is
the normalized coordinate system of the first context view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyScene, NonUnitQuaternion, RangeError

SEM_DIM = 16

# SH coefficient counts per channel -> band degree
SH_DEGREE = {1: 0, 4: 1, 9: 2, 16: 3}

# Quaternion norm tolerances: construction re-normalizes only when the norm
# drifts past UNIT_TOL (preserves bit-exact round trips of stored scenes);
# beyond CORRUPT_TOL the input is treated as corrupted.
UNIT_TOL = 1e-6
CORRUPT_TOL = 1e-3


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions, shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


@dataclass
class Gaussian:
    """A single semantic Gaussian primitive (convenience view, not SoA)."""

    p: np.ndarray
    p_delta: np.ndarray
    q: np.ndarray
    s: np.ndarray
    alpha: float
    sh: np.ndarray  # (3, d_color)
    f: np.ndarray = field(default_factory=lambda: np.zeros(SEM_DIM))

    def center(self) -> np.ndarray:
        return center(self)

    def covariance(self) -> np.ndarray:
        return covariance(self)


def center(g: Gaussian) -> np.ndarray:
    """Gaussian center: base position plus offset."""
    return np.asarray(g.p, dtype=np.float64) + np.asarray(g.p_delta, dtype=np.float64)


def covariance(g: Gaussian) -> np.ndarray:
    """Covariance R(q) diag(s)^2 R(q)^T; SPD whenever s > 0.

    Raises NonUnitQuaternion when |q| strays more than 1e-3 from unit,
    which signals corrupted input rather than ordinary drift.
    """
    q = np.asarray(g.q, dtype=np.float64)
    nrm = np.linalg.norm(q)
    if abs(nrm - 1.0) > CORRUPT_TOL:
        raise NonUnitQuaternion(f"|q| = {nrm:.6f}")
    R = quat_to_rotmat(q / nrm)
    s = np.asarray(g.s, dtype=np.float64)
    return (R * (s * s)) @ R.T


class GaussianScene:
    """Ordered collection of primitives in the first-view world frame.

    Stored as parallel arrays; primitive identity is the positional index.
    The container is treated as immutable while shared: the optimizer
    produces updated copies via ``replaced``.
    """

    __slots__ = ("p", "p_delta", "q", "s", "alpha", "sh", "f", "frame_note")

    def __init__(self, p, p_delta, q, s, alpha, sh, f, frame_note: str = "",
                 validate: bool = True):
        self.p = np.ascontiguousarray(p, dtype=np.float64)
        self.p_delta = np.ascontiguousarray(p_delta, dtype=np.float64)
        self.q = np.ascontiguousarray(q, dtype=np.float64)
        self.s = np.ascontiguousarray(s, dtype=np.float64)
        self.alpha = np.ascontiguousarray(alpha, dtype=np.float64)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64)
        self.f = np.ascontiguousarray(f, dtype=np.float64)
        self.frame_note = frame_note
        n = self.p.shape[0]
        expected = {
            "p": (n, 3), "p_delta": (n, 3), "q": (n, 4), "s": (n, 3),
            "alpha": (n,), "f": (n, SEM_DIM),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise RangeError(f"{name} has shape {got}, expected {shape}")
        if self.sh.ndim != 3 or self.sh.shape[:2] != (n, 3):
            raise RangeError(f"sh has shape {self.sh.shape}, expected ({n}, 3, d_color)")
        if self.d_color not in SH_DEGREE:
            raise RangeError(f"unsupported d_color {self.d_color}")
        if validate:
            self._check_ranges()
            self._fix_quaternions()

    def _check_ranges(self) -> None:
        if self.n and not (np.all(self.s > 0) and np.all(np.isfinite(self.s))):
            raise RangeError("scale must be strictly positive")
        ok = (self.alpha > 0.0) & (self.alpha < 1.0)
        if self.n and not np.all(ok):
            raise RangeError("alpha must lie in (0, 1) exclusive")

    def _fix_quaternions(self) -> None:
        nrm = np.linalg.norm(self.q, axis=1)
        if self.n and not np.all(np.isfinite(nrm) & (nrm > 0)):
            raise RangeError("quaternion norm must be finite and nonzero")
        off = np.abs(nrm - 1.0) > UNIT_TOL
        if np.any(off):
            self.q[off] /= nrm[off, None]

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def d_color(self) -> int:
        return self.sh.shape[2]

    def centers(self) -> np.ndarray:
        return self.p + self.p_delta

    def covariances(self) -> np.ndarray:
        R = quat_to_rotmat(normalize_quat(self.q))
        return np.einsum("nij,nj,nkj->nik", R, self.s * self.s, R)

    def primitive(self, i: int) -> Gaussian:
        return Gaussian(
            p=self.p[i].copy(), p_delta=self.p_delta[i].copy(),
            q=self.q[i].copy(), s=self.s[i].copy(), alpha=float(self.alpha[i]),
            sh=self.sh[i].copy(), f=self.f[i].copy(),
        )

    def append(self, other: "GaussianScene") -> "GaussianScene":
        """New scene with ``other``'s primitives appended; existing rows are
        carried over bit-exactly so indices stay stable within a round."""
        if other.n == 0:
            return self.copy()
        if other.d_color != self.d_color:
            raise RangeError("d_color mismatch when merging scenes")
        return GaussianScene(
            np.concatenate([self.p, other.p]),
            np.concatenate([self.p_delta, other.p_delta]),
            np.concatenate([self.q, other.q]),
            np.concatenate([self.s, other.s]),
            np.concatenate([self.alpha, other.alpha]),
            np.concatenate([self.sh, other.sh]),
            np.concatenate([self.f, other.f]),
            frame_note=self.frame_note, validate=False,
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.p.copy(), self.p_delta.copy(), self.q.copy(), self.s.copy(),
            self.alpha.copy(), self.sh.copy(), self.f.copy(),
            frame_note=self.frame_note, validate=False,
        )

    def replaced(self, **fields) -> "GaussianScene":
        """Copy with some arrays replaced; invariants are re-validated."""
        data = {name: getattr(self, name) for name in
                ("p", "p_delta", "q", "s", "alpha", "sh", "f")}
        data.update(fields)
        return GaussianScene(frame_note=self.frame_note, **data)

    @classmethod
    def from_gaussians(cls, gs, frame_note: str = "") -> "GaussianScene":
        if not gs:
            raise EmptyScene("no primitives given")
        d_color = np.asarray(gs[0].sh).shape[1]
        return cls(
            np.stack([g.p for g in gs]),
            np.stack([g.p_delta for g in gs]),
            np.stack([g.q for g in gs]),
            np.stack([g.s for g in gs]),
            np.array([g.alpha for g in gs], dtype=np.float64),
            np.stack([np.reshape(g.sh, (3, d_color)) for g in gs]),
            np.stack([g.f for g in gs]),
            frame_note=frame_note,
        )

    @classmethod
    def empty(cls, d_color: int = 1, frame_note: str = "") -> "GaussianScene":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
            np.zeros((0, 3)), np.zeros((0,)), np.zeros((0, 3, d_color)),
            np.zeros((0, SEM_DIM)), frame_note=frame_note, validate=False,
        )

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"GaussianScene(n={self.n}, d_color={self.d_color})"
