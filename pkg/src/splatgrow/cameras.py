"""Pinhole camera: intrinsics plus a rigid world-to-camera pose.

Pixel convention: the sample point of pixel (h, w) is the continuous
coordinate (x=w, y=h), so a point that projects to (cx, cy) lands on the
pixel whose indices are (round(cy), round(cx)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, RangeError

POSE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    R: np.ndarray   # (3, 3) world -> camera rotation
    t: np.ndarray   # (3,) translation: x_cam = R x_world + t
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if err > POSE_TOL or abs(np.linalg.det(self.R) - 1.0) > POSE_TOL:
            raise RangeError(f"rotation block is not orthonormal with det +1 (err {err:.2e})")
        if not (self.fx > 0 and self.fy > 0):
            raise RangeError("focal lengths must be positive")
        if not (self.height > 0 and self.width > 0):
            raise RangeError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise RangeError("principal point must lie inside the image")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.t) @ self.R

    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def identity(cls, height: int, width: int, focal: float | None = None) -> "Camera":
        """Camera at the world origin looking down +z."""
        if focal is None:
            focal = 1.2 * max(height, width)
        return cls(R=np.eye(3), t=np.zeros(3), fx=focal, fy=focal,
                   cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   height=height, width=width)

    def with_pose(self, R: np.ndarray, t: np.ndarray) -> "Camera":
        return Camera(R=R, t=t, fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                      height=self.height, width=self.width)

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(), "t": self.t.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "height": self.height, "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(R=np.asarray(d["R"], dtype=np.float64),
                       t=np.asarray(d["t"], dtype=np.float64),
                       fx=float(d["fx"]), fy=float(d["fy"]),
                       cx=float(d["cx"]), cy=float(d["cy"]),
                       height=int(d["height"]), width=int(d["width"]))
        except KeyError as exc:
            raise FormatError(f"camera dict missing field {exc}") from exc
