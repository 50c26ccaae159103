"""Sparse 3D grid of running-mean embeddings built from posed RGB-D feature frames.

Each occupied voxel stores ``(count, sum)`` rather than the mean so that grids
built from disjoint frame partitions can be merged exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, MapFormatError
from .geometry import GridSpec, Intrinsics, Pose, back_project_many, voxel_indices

MAGIC = b"MSLM"
FORMAT_VERSION = 1


@dataclass
class PosedFrame:
    """One camera frame: dense pixel embeddings + registered depth + pose."""

    pixel_features: np.ndarray  # (H, W, C)
    depth: np.ndarray           # (H, W) meters, 0 = invalid
    intrinsics: Intrinsics
    pose: Pose

    def __post_init__(self):
        if self.pixel_features.shape[:2] != self.depth.shape:
            raise DimensionMismatchError(
                f"feature raster {self.pixel_features.shape[:2]} does not match "
                f"depth raster {self.depth.shape}"
            )
        if np.any(self.depth < 0):
            raise ValueError("depth values must be >= 0 (0 marks invalid pixels)")


@dataclass
class FuseStats:
    fused: int = 0
    dropped_invalid_depth: int = 0
    dropped_out_of_bounds: int = 0


class FeatureGrid:
    """Sparse voxel grid accumulating per-cell embedding sums and counts."""

    def __init__(self, spec: GridSpec, feature_dim: int):
        if feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        self.spec = spec
        self.feature_dim = feature_dim
        self._cells: dict = {}  # (px, py, pz) -> [count, sum (C,) float64]

    def __len__(self) -> int:
        return len(self._cells)

    def cells(self):
        """Iterate over (index, count, sum) for every occupied voxel."""
        for idx, (count, vec) in self._cells.items():
            yield idx, count, vec

    def indices(self) -> list:
        return list(self._cells.keys())

    def cell_mean(self, idx):
        """Mean embedding at a voxel, or None for never-touched cells."""
        entry = self._cells.get(tuple(idx))
        if entry is None:
            return None
        count, vec = entry
        return vec / count

    def cell_count(self, idx) -> int:
        entry = self._cells.get(tuple(idx))
        return 0 if entry is None else entry[0]

    def accumulate(self, idx, count: int, vec_sum: np.ndarray):
        entry = self._cells.get(idx)
        if entry is None:
            self._cells[idx] = [int(count), vec_sum.astype(np.float64, copy=True)]
        else:
            entry[0] += int(count)
            entry[1] += vec_sum

    def means(self):
        """All occupied voxels as ``(indices (N, 3) int64, means (N, C))``."""
        n = len(self._cells)
        idx = np.empty((n, 3), dtype=np.int64)
        means = np.empty((n, self.feature_dim))
        for i, (key, (count, vec)) in enumerate(self._cells.items()):
            idx[i] = key
            means[i] = vec / count
        return idx, means

    def top_down(self) -> "FeatureGrid":
        """Collapse the vertical axis, reproducing 2D grid-map semantics.

        Counts and sums are combined across z, so the result equals fusing the
        same point stream directly into a single-layer grid.
        """
        flat = FeatureGrid(
            GridSpec(self.spec.h, self.spec.w, 1, self.spec.scale), self.feature_dim
        )
        for (px, py, _pz), (count, vec) in self._cells.items():
            flat.accumulate((px, py, 0), count, vec)
        return flat


def fuse_frame(grid: FeatureGrid, frame: PosedFrame, height_band=None) -> FuseStats:
    """Fuse one posed frame into the grid, averaging embeddings per voxel.

    ``height_band`` optionally restricts fusion to points whose world-frame
    height lies inside ``(lo, hi)``; the default accepts everything.
    """
    h, w, c = frame.pixel_features.shape
    if c != grid.feature_dim:
        raise DimensionMismatchError(
            f"frame feature dim {c} does not match grid feature dim {grid.feature_dim}"
        )
    stats = FuseStats()

    depth = frame.depth.reshape(-1)
    valid = depth > 0
    stats.dropped_invalid_depth = int(np.count_nonzero(~valid))
    if not np.any(valid):
        return stats

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    us = np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1)[valid]
    p_cam = back_project_many(us, depth[valid], frame.intrinsics)
    p_world = frame.pose.apply(p_cam)

    feats = frame.pixel_features.reshape(-1, c)[valid]
    if height_band is not None:
        lo, hi = height_band
        in_band = (p_world[:, 1] >= lo) & (p_world[:, 1] <= hi)
        p_world = p_world[in_band]
        feats = feats[in_band]

    idx, ok = voxel_indices(p_world, grid.spec)
    stats.dropped_out_of_bounds = int(np.count_nonzero(~ok))
    idx = idx[ok]
    feats = feats[ok].astype(np.float64)
    stats.fused = idx.shape[0]
    if stats.fused == 0:
        return stats

    uniq, inverse, counts = np.unique(
        idx, axis=0, return_inverse=True, return_counts=True
    )
    sums = np.zeros((uniq.shape[0], c))
    np.add.at(sums, inverse, feats)
    for i in range(uniq.shape[0]):
        grid.accumulate(tuple(int(v) for v in uniq[i]), int(counts[i]), sums[i])
    return stats


def fuse_points(grid: FeatureGrid, p_world: np.ndarray, feats: np.ndarray) -> FuseStats:
    """Fuse raw world points with per-point embeddings (no camera model)."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[1] != grid.feature_dim:
        raise DimensionMismatchError("point feature dim does not match grid")
    stats = FuseStats()
    idx, ok = voxel_indices(np.asarray(p_world), grid.spec)
    stats.dropped_out_of_bounds = int(np.count_nonzero(~ok))
    idx, feats = idx[ok], feats[ok]
    stats.fused = idx.shape[0]
    for i in range(idx.shape[0]):
        grid.accumulate(tuple(int(v) for v in idx[i]), 1, feats[i])
    return stats


def merge(a: FeatureGrid, b: FeatureGrid) -> FeatureGrid:
    """Combine two grids cell-wise; counts and sums add exactly."""
    if a.spec != b.spec or a.feature_dim != b.feature_dim:
        raise DimensionMismatchError("cannot merge grids with different spec or dim")
    out = FeatureGrid(a.spec, a.feature_dim)
    for src in (a, b):
        for idx, count, vec in src.cells():
            out.accumulate(idx, count, vec)
    return out


def save(grid: FeatureGrid, path):
    """Write a grid in the MSLM binary map format (little-endian)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<IIId", grid.spec.h, grid.spec.w, grid.spec.z,
                            grid.spec.scale))
        f.write(struct.pack("<I", grid.feature_dim))
        f.write(struct.pack("<Q", len(grid)))
        for idx, count, vec in grid.cells():
            f.write(struct.pack("<IIII", idx[0], idx[1], idx[2], count))
            f.write(vec.astype("<f8").tobytes())


def load(path) -> FeatureGrid:
    """Read a grid written by :func:`save`; bit-identical round trip."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise MapFormatError(f"bad magic {data[:4]!r}", offset=0)
    off = 4
    (version,) = struct.unpack_from("<H", data, off)
    if version != FORMAT_VERSION:
        raise MapFormatError(f"unsupported map format version {version}", offset=off)
    off += 2
    try:
        h, w, z, scale = struct.unpack_from("<IIId", data, off)
        off += 20
        (dim,) = struct.unpack_from("<I", data, off)
        off += 4
        (n_cells,) = struct.unpack_from("<Q", data, off)
        off += 8
        grid = FeatureGrid(GridSpec(h, w, z, scale), dim)
        rec = 16 + 8 * dim
        if len(data) - off != n_cells * rec:
            raise MapFormatError(
                f"truncated map file: expected {n_cells} records", offset=off
            )
        for _ in range(n_cells):
            px, py, pz, count = struct.unpack_from("<IIII", data, off)
            off += 16
            vec = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
            off += 8 * dim
            grid._cells[(px, py, pz)] = [count, vec]
        return grid
    except struct.error as exc:
        raise MapFormatError(f"truncated map file: {exc}", offset=off) from exc
