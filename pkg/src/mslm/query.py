"""Open-vocabulary landmark indexing and embodiment-specific obstacle maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .featmap import FeatureGrid
from .geometry import GridSpec, voxel_indices


@dataclass
class LabelSet:
    """Ordered text categories with their (M, C) embedding matrix."""

    labels: list
    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.labels):
            raise DimensionMismatchError(
                "embedding matrix rows must match label count"
            )
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("label embeddings must be L2-normalized")

    def __len__(self):
        return len(self.labels)

    def index_of(self, label: str) -> int:
        return self.labels.index(label)


@dataclass
class SegmentationGrid:
    """Per-voxel best label index and similarity score for occupied cells."""

    spec: GridSpec
    labels: list
    cells: dict  # (px, py, pz) -> (label_index, score)

    def mask(self, label_index: int):
        """Voxel indices assigned to one label, as an (N, 3) array."""
        hits = [idx for idx, (li, _s) in self.cells.items() if li == label_index]
        if not hits:
            return np.empty((0, 3), dtype=np.int64)
        return np.array(sorted(hits), dtype=np.int64)

    def top_down_mask(self, label_indices) -> np.ndarray:
        """Union of the selected labels' cells projected onto the 2D grid."""
        wanted = set(label_indices)
        out = np.zeros((self.spec.h, self.spec.w), dtype=np.uint8)
        for (px, py, _pz), (li, _s) in self.cells.items():
            if li in wanted:
                out[px, py] = 1
        return out


@dataclass
class ObstacleGrid:
    """Binary top-down occupancy: 1 = obstacle, 0 = free."""

    spec: GridSpec
    values: np.ndarray              # (h, w) uint8 in {0, 1}
    height_band: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.shape != (self.spec.h, self.spec.w):
            raise DimensionMismatchError("obstacle grid shape does not match spec")
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("obstacle grid values must be 0 or 1")


def segment_grid(grid: FeatureGrid, labels: LabelSet, normalize: bool = True
                 ) -> SegmentationGrid:
    """Assign every occupied voxel its best-matching label.

    Cell means are L2-normalized before the similarity product by default
    (cosine similarity); pass ``normalize=False`` for a raw dot product.
    Ties break toward the lowest label index.
    """
    if labels.embeddings.shape[1] != grid.feature_dim:
        raise DimensionMismatchError(
            "label embedding dim does not match grid feature dim"
        )
    idx, q = grid.means()
    if idx.shape[0] == 0:
        return SegmentationGrid(grid.spec, list(labels.labels), {})
    if normalize:
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        q = q / np.where(norms > 0, norms, 1.0)
    sim = q @ labels.embeddings.T
    best = np.argmax(sim, axis=1)  # first max wins: lowest label index on ties
    scores = sim[np.arange(sim.shape[0]), best]
    cells = {
        tuple(int(v) for v in idx[i]): (int(best[i]), float(scores[i]))
        for i in range(idx.shape[0])
    }
    return SegmentationGrid(grid.spec, list(labels.labels), cells)


def obstacle_mask(points: np.ndarray, spec: GridSpec, t1: float, t2: float
                  ) -> ObstacleGrid:
    """Mark cells hit by any world point whose height lies in [t1, t2]."""
    if t1 > t2:
        raise ValueError(f"height band is empty: t1={t1} > t2={t2}")
    values = np.zeros((spec.h, spec.w), dtype=np.uint8)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0]:
        in_band = (points[:, 1] >= t1) & (points[:, 1] <= t2)
        idx, _ok = voxel_indices(points[in_band], spec)
        # vertical index may be out of the 3D grid; only (px, py) matter here
        idx2 = idx[:, :2]
        ok2 = (
            (idx2[:, 0] >= 0) & (idx2[:, 0] < spec.h)
            & (idx2[:, 1] >= 0) & (idx2[:, 1] < spec.w)
        )
        keep = idx2[ok2]
        values[keep[:, 0], keep[:, 1]] = 1
    return ObstacleGrid(spec, values, (t1, t2))


def embodiment_obstacle_map(grid: FeatureGrid, base: ObstacleGrid,
                            potential: LabelSet, obstacle_subset) -> ObstacleGrid:
    """Obstacle map for one embodiment: union of chosen category masks ∩ base."""
    subset = list(obstacle_subset)
    for li in subset:
        if not 0 <= li < len(potential):
            raise IndexError(f"obstacle label index {li} out of range")
    seg = segment_grid(grid, potential)
    union = seg.top_down_mask(subset)
    values = (union & base.values).astype(np.uint8)
    return ObstacleGrid(base.spec, values, base.height_band)


def write_pgm(values: np.ndarray, path, scale255: bool = False):
    """Export a 2D uint8 grid as binary PGM (P5), one byte per cell."""
    arr = np.asarray(values)
    if scale255:
        arr = np.where(arr > 0, 255, 0)
    arr = arr.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())
