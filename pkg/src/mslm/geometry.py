"""Pinhole back-projection, rigid transforms, and world-to-grid index mapping.

Conventions used throughout the engine:

* world frame: ``y`` is the height axis, ``x``/``z`` span the ground plane
* grid row index ``px`` follows world ``x``, column index ``py`` follows
  world ``-z``, vertical index ``pz`` follows world ``y`` (floor at 0)
* the world origin sits at the center of the ground-plane grid
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDepthError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics (focal lengths and principal point, pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``p_world = rotation @ p_local + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=_ORTHO_TOL):
            raise ValueError("rotation determinant is not +1")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) array of points."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class GridSpec:
    """Grid dimensions (cells) and resolution (meters per cell)."""

    h: int
    w: int
    z: int
    scale: float

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.z < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def shape(self) -> tuple:
        return (self.h, self.w, self.z)

    def contains(self, idx) -> bool:
        px, py, pz = idx
        return 0 <= px < self.h and 0 <= py < self.w and 0 <= pz < self.z

    def cell_center(self, idx) -> np.ndarray:
        """World coordinates (x, y, z) of a voxel center."""
        px, py, pz = idx
        x = (px - self.h / 2.0) * self.scale
        z = -(py - self.w / 2.0) * self.scale
        y = pz * self.scale
        return np.array([x, y, z])


def back_project(u, depth: float, k: Intrinsics) -> np.ndarray:
    """Back-project pixel ``u = (col, row)`` at ``depth`` meters to the camera frame."""
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    uu, vv = float(u[0]), float(u[1])
    return np.array([(uu - k.cx) / k.fx * depth, (vv - k.cy) / k.fy * depth, depth])


def back_project_many(us: np.ndarray, depths: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Vectorized back-projection: (N, 2) pixels + (N,) depths -> (N, 3) points.

    The caller is responsible for filtering out non-positive depths.
    """
    us = np.asarray(us, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    x = (us[:, 0] - k.cx) / k.fx * depths
    y = (us[:, 1] - k.cy) / k.fy * depths
    return np.stack([x, y, depths], axis=1)


def to_world(p_cam: np.ndarray, pose: Pose) -> np.ndarray:
    """Camera-frame point(s) to world frame."""
    return pose.apply(p_cam)


def project_to_grid(p_world, spec: GridSpec):
    """Ground-plane grid index of a world point.

    Returns ``(px, py)`` or ``None`` when the point falls outside the grid;
    out-of-bounds points are reported rather than clamped.
    """
    p = np.asarray(p_world, dtype=np.float64)
    px = int(np.floor(spec.h / 2.0 + p[0] / spec.scale + 0.5))
    py = int(np.floor(spec.w / 2.0 - p[2] / spec.scale + 0.5))
    if 0 <= px < spec.h and 0 <= py < spec.w:
        return (px, py)
    return None


def voxel_index(p_world, spec: GridSpec):
    """3D voxel index of a world point, or ``None`` when out of bounds."""
    p = np.asarray(p_world, dtype=np.float64)
    px = int(np.floor(spec.h / 2.0 + p[0] / spec.scale + 0.5))
    py = int(np.floor(spec.w / 2.0 - p[2] / spec.scale + 0.5))
    pz = int(np.floor(p[1] / spec.scale + 0.5))
    idx = (px, py, pz)
    return idx if spec.contains(idx) else None


def voxel_indices(p_world: np.ndarray, spec: GridSpec):
    """Vectorized voxel indices for an (N, 3) point array.

    Returns ``(indices, in_bounds)``: signed integer indices of shape (N, 3)
    and a boolean mask of points that landed inside the grid.
    """
    p = np.asarray(p_world, dtype=np.float64)
    px = np.floor(spec.h / 2.0 + p[:, 0] / spec.scale + 0.5).astype(np.int64)
    py = np.floor(spec.w / 2.0 - p[:, 2] / spec.scale + 0.5).astype(np.int64)
    pz = np.floor(p[:, 1] / spec.scale + 0.5).astype(np.int64)
    idx = np.stack([px, py, pz], axis=1)
    ok = (
        (px >= 0) & (px < spec.h)
        & (py >= 0) & (py < spec.w)
        & (pz >= 0) & (pz < spec.z)
    )
    return idx, ok
