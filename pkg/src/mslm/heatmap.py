"""Per-modality 3D heatmaps and their cross-modal fusion.

A heatmap is a dense [0, 1] score volume over the voxel grid; the score of a
voxel is the likelihood that it is the query target.  Point- and pose-based
generators decay with ground-plane distance (in cells); object heatmaps decay
with full 3D Euclidean distance to the nearest object voxel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError
from .geometry import GridSpec


@dataclass
class Heatmap:
    spec: GridSpec
    values: np.ndarray   # (h, w, z) float64 in [0, 1]
    decay_rate: float    # heat lost per cell of distance

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.spec.shape:
            raise DimensionMismatchError("heatmap shape does not match spec")

    def copy(self) -> "Heatmap":
        return Heatmap(self.spec, self.values.copy(), self.decay_rate)


@dataclass
class ScoredPoses:
    """Voxel positions with [0, 1] confidence scores (pose-feature matches)."""

    positions: np.ndarray  # (N, 3) voxel coords
    scores: np.ndarray     # (N,) in [0, 1]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.positions.shape[0] != self.scores.shape[0]:
            raise DimensionMismatchError("positions and scores length mismatch")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")


def eps_per_cell(eps_per_meter: float, spec: GridSpec) -> float:
    """Convert a per-meter decay rate to the per-cell rate used internally."""
    return eps_per_meter * spec.scale


def _index_grids(spec: GridSpec):
    px = np.arange(spec.h, dtype=np.float64)[:, None, None]
    py = np.arange(spec.w, dtype=np.float64)[None, :, None]
    pz = np.arange(spec.z, dtype=np.float64)[None, None, :]
    return px, py, pz


def point_heatmap(p, eps: float, spec: GridSpec) -> Heatmap:
    """Heat 1 at voxel ``p``, decaying linearly with ground-plane distance."""
    if eps <= 0:
        raise ValueError("decay rate must be positive")
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if not spec.contains((int(p[0]), int(p[1]), int(p[2]) if p.size > 2 else 0)):
        raise IndexError(f"heatmap source {tuple(p)} outside grid")
    px, py, _pz = _index_grids(spec)
    dist = np.sqrt((px - p[0]) ** 2 + (py - p[1]) ** 2)
    vals = np.maximum(1.0 - eps * dist, 0.0)
    return Heatmap(spec, np.broadcast_to(vals, spec.shape).copy(), eps)


def object_heatmap(points, eps: float, spec: GridSpec) -> Heatmap:
    """Heat 1 at every object voxel, decaying with 3D distance to the nearest."""
    if eps <= 0:
        raise ValueError("decay rate must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("object heatmap needs at least one point")
    tree = cKDTree(pts)
    px, py, pz = _index_grids(spec)
    coords = np.stack(
        np.meshgrid(
            np.arange(spec.h), np.arange(spec.w), np.arange(spec.z), indexing="ij"
        ),
        axis=-1,
    ).reshape(-1, 3).astype(np.float64)
    d_min, _ = tree.query(coords, k=1)
    vals = np.maximum(1.0 - eps * d_min, 0.0).reshape(spec.shape)
    return Heatmap(spec, vals, eps)


def scored_heatmap(entries: ScoredPoses, eps: float, spec: GridSpec) -> Heatmap:
    """Per-entry heat equal to its score, decaying with ground-plane distance.

    The value of a voxel is the best over entries whose affected region covers
    it, clamped at zero.
    """
    if eps <= 0:
        raise ValueError("decay rate must be positive")
    if entries.positions.shape[0] == 0:
        raise ValueError("scored heatmap needs at least one entry")
    px, py, _pz = _index_grids(spec)
    best = np.full((spec.h, spec.w, 1), -np.inf)
    for pos, score in zip(entries.positions, entries.scores):
        dist = np.sqrt((px - pos[0]) ** 2 + (py - pos[1]) ** 2)
        np.maximum(best, score - eps * dist, out=best)
    vals = np.maximum(best, 0.0)
    return Heatmap(spec, np.broadcast_to(vals, spec.shape).copy(), eps)


def fuse(heatmaps) -> Heatmap:
    """Element-wise product of heatmaps over identical grids."""
    maps = list(heatmaps)
    if not maps:
        raise ValueError("fuse needs at least one heatmap")
    spec = maps[0].spec
    for h in maps[1:]:
        if h.spec != spec:
            raise DimensionMismatchError("cannot fuse heatmaps with different specs")
    if len(maps) == 1:
        return maps[0].copy()
    vals = maps[0].values.copy()
    for h in maps[1:]:
        vals *= h.values
    return Heatmap(spec, vals, maps[0].decay_rate)


def argmax_position(h: Heatmap):
    """Location and value of the global maximum; None when the map is all-zero.

    Ties resolve to the lexicographically smallest voxel index.
    """
    flat = int(np.argmax(h.values))
    score = float(h.values.flat[flat])
    if score <= 0.0:
        return None
    idx = np.unravel_index(flat, h.values.shape)
    return (int(idx[0]), int(idx[1]), int(idx[2])), score


def save_volume(h: Heatmap, path):
    """Raw little-endian float32 volume with a 12-byte dims header."""
    with open(path, "wb") as f:
        f.write(np.array(h.values.shape, dtype="<u4").tobytes())
        f.write(h.values.astype("<f4").tobytes())


def load_volume(path) -> np.ndarray:
    with open(path, "rb") as f:
        dims = np.frombuffer(f.read(12), dtype="<u4")
        vals = np.frombuffer(f.read(), dtype="<f4")
    return vals.reshape(tuple(int(d) for d in dims))


def top_view(h: Heatmap) -> np.ndarray:
    """Max-over-z projection scaled to uint8, for PGM visualization export."""
    proj = h.values.max(axis=2)
    return np.round(proj * 255.0).astype(np.uint8)
