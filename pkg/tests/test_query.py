import numpy as np
import pytest

from mslm.errors import DimensionMismatchError
from mslm.featmap import FeatureGrid, fuse_points
from mslm.geometry import GridSpec
from mslm.query import (LabelSet, ObstacleGrid, embodiment_obstacle_map,
                        obstacle_mask, segment_grid, write_pgm)

SPEC = GridSpec(32, 32, 32, 0.1)


def unit_rows(rng, m, c):
    e = rng.standard_normal((m, c))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def filled_grid(rng, c=8, n=300):
    grid = FeatureGrid(SPEC, c)
    pts = rng.uniform(-1.5, 1.5, size=(n, 3))
    pts[:, 1] = rng.uniform(0, 2.5, size=n)
    fuse_points(grid, pts, rng.standard_normal((n, c)))
    return grid


def test_segment_matches_brute_force_argmax():
    rng = np.random.default_rng(30)
    grid = filled_grid(rng)
    labels = LabelSet([f"l{i}" for i in range(5)], unit_rows(rng, 5, 8))
    seg = segment_grid(grid, labels)
    assert set(seg.cells) == set(grid.indices())
    for idx, (li, score) in seg.cells.items():
        q = grid.cell_mean(idx)
        q = q / np.linalg.norm(q)
        sims = labels.embeddings @ q
        assert li == int(np.argmax(sims))
        assert score == pytest.approx(sims[li], abs=1e-12)


def test_exact_label_match_scores_one():
    rng = np.random.default_rng(31)
    emb = unit_rows(rng, 3, 8)
    labels = LabelSet(["a", "b", "c"], emb)
    grid = FeatureGrid(SPEC, 8)
    fuse_points(grid, np.array([[0.0, 0.5, 0.0]]), emb[1][None, :] * 7.0)
    seg = segment_grid(grid, labels)
    (idx, (li, score)), = seg.cells.items()
    assert li == 1
    assert score == pytest.approx(1.0, abs=1e-9)


def test_tie_breaks_to_lowest_label_index():
    v = np.zeros(4)
    v[0] = 1.0
    labels = LabelSet(["dup1", "dup2"], np.stack([v, v]))
    grid = FeatureGrid(SPEC, 4)
    fuse_points(grid, np.array([[0.0, 0.5, 0.0]]), v[None, :])
    seg = segment_grid(grid, labels)
    assert next(iter(seg.cells.values()))[0] == 0


def test_positive_scaling_invariance_under_normalization():
    rng = np.random.default_rng(32)
    labels = LabelSet([f"l{i}" for i in range(4)], unit_rows(rng, 4, 8))
    pts = rng.uniform(-1, 1, size=(50, 3))
    pts[:, 1] = rng.uniform(0, 2, size=50)
    feats = rng.standard_normal((50, 8))
    a, b = FeatureGrid(SPEC, 8), FeatureGrid(SPEC, 8)
    fuse_points(a, pts, feats)
    fuse_points(b, pts, feats * 12.5)
    sa, sb = segment_grid(a, labels), segment_grid(b, labels)
    for idx in sa.cells:
        assert sa.cells[idx][0] == sb.cells[idx][0]


def test_raw_dot_mode_skips_normalization():
    rng = np.random.default_rng(33)
    labels = LabelSet([f"l{i}" for i in range(3)], unit_rows(rng, 3, 8))
    grid = FeatureGrid(SPEC, 8)
    v = labels.embeddings[2] * 5.0
    fuse_points(grid, np.array([[0.0, 0.5, 0.0]]), v[None, :])
    seg = segment_grid(grid, labels, normalize=False)
    (_, (li, score)), = seg.cells.items()
    assert li == 2
    assert score == pytest.approx(5.0, abs=1e-9)


def test_segment_empty_grid():
    rng = np.random.default_rng(34)
    labels = LabelSet(["a"], unit_rows(rng, 1, 8))
    seg = segment_grid(FeatureGrid(SPEC, 8), labels)
    assert seg.cells == {}
    assert seg.mask(0).shape == (0, 3)


def test_segment_dim_mismatch_raises():
    rng = np.random.default_rng(35)
    labels = LabelSet(["a"], unit_rows(rng, 1, 16))
    with pytest.raises(DimensionMismatchError):
        segment_grid(filled_grid(rng), labels)


def test_label_set_requires_unit_rows():
    with pytest.raises(ValueError):
        LabelSet(["a"], np.array([[2.0, 0.0]]))
    with pytest.raises(DimensionMismatchError):
        LabelSet(["a", "b"], np.array([[1.0, 0.0]]))


def test_obstacle_mask_matches_scalar_loop():
    from mslm.geometry import project_to_grid
    rng = np.random.default_rng(36)
    pts = rng.uniform(-2, 2, size=(500, 3))
    pts[:, 1] = rng.uniform(-0.5, 3.0, size=500)
    t1, t2 = 0.3, 1.8
    grid = obstacle_mask(pts, SPEC, t1, t2)
    expect = np.zeros((SPEC.h, SPEC.w), dtype=np.uint8)
    for p in pts:
        if t1 <= p[1] <= t2:
            cell = project_to_grid(p, SPEC)
            if cell is not None:
                expect[cell] = 1
    assert np.array_equal(grid.values, expect)
    assert grid.height_band == (t1, t2)


def test_obstacle_mask_band_boundaries_inclusive():
    pts = np.array([[0.0, 0.3, 0.0], [0.5, 1.8, 0.0], [1.0, 0.29, 0.0],
                    [1.5, 1.81, 0.0]])
    grid = obstacle_mask(pts, SPEC, 0.3, 1.8)
    assert grid.values.sum() == 2


def test_obstacle_mask_empty_band_raises():
    with pytest.raises(ValueError):
        obstacle_mask(np.zeros((1, 3)), SPEC, 2.0, 1.0)


def scene_with_floor_and_table(rng):
    """Grid with a floor sheet, a table slab, and a chair blob, labeled exactly."""
    c = 8
    emb = unit_rows(rng, 3, c)  # floor, table, chair
    labels = LabelSet(["floor", "table", "chair"], emb)
    grid = FeatureGrid(SPEC, c)
    xs = np.linspace(-1.4, 1.4, 12)
    floor_pts = np.array([[x, 0.0, z] for x in xs for z in xs])
    table_pts = np.array([[x, 0.8, z] for x in np.linspace(0.2, 0.8, 5)
                          for z in np.linspace(0.2, 0.8, 5)])
    chair_pts = np.array([[x, 0.5, z] for x in np.linspace(-0.9, -0.5, 4)
                          for z in np.linspace(-0.9, -0.5, 4)])
    for pts, li in ((floor_pts, 0), (table_pts, 1), (chair_pts, 2)):
        fuse_points(grid, pts, np.tile(emb[li], (pts.shape[0], 1)))
    all_pts = np.vstack([floor_pts, table_pts, chair_pts])
    return grid, labels, all_pts


def test_embodiment_map_matches_brute_force():
    rng = np.random.default_rng(37)
    grid, labels, pts = scene_with_floor_and_table(rng)
    base = obstacle_mask(pts, SPEC, 0.2, 1.5)
    ground = embodiment_obstacle_map(grid, base, labels, [1, 2])
    seg = segment_grid(grid, labels)
    expect = seg.top_down_mask([1, 2]) & base.values
    assert np.array_equal(ground.values, expect)
    assert ground.values.sum() > 0


def test_drone_obstacles_subset_of_ground():
    """Removing categories from the subset can only free cells, never add."""
    rng = np.random.default_rng(38)
    grid, labels, pts = scene_with_floor_and_table(rng)
    base = obstacle_mask(pts, SPEC, 0.2, 1.5)
    ground = embodiment_obstacle_map(grid, base, labels, [1, 2])
    aerial = embodiment_obstacle_map(grid, base, labels, [2])
    assert np.all(aerial.values <= ground.values)
    assert aerial.values.sum() < ground.values.sum()


def test_empty_subset_is_all_free():
    rng = np.random.default_rng(39)
    grid, labels, pts = scene_with_floor_and_table(rng)
    base = obstacle_mask(pts, SPEC, 0.2, 1.5)
    none = embodiment_obstacle_map(grid, base, labels, [])
    assert none.values.sum() == 0


def test_embodiment_bad_label_index_raises():
    rng = np.random.default_rng(40)
    grid, labels, pts = scene_with_floor_and_table(rng)
    base = obstacle_mask(pts, SPEC, 0.2, 1.5)
    with pytest.raises(IndexError):
        embodiment_obstacle_map(grid, base, labels, [7])


def test_obstacle_grid_validation():
    with pytest.raises(DimensionMismatchError):
        ObstacleGrid(SPEC, np.zeros((3, 3), dtype=np.uint8))
    bad = np.zeros((SPEC.h, SPEC.w), dtype=np.uint8)
    bad[0, 0] = 5
    with pytest.raises(ValueError):
        ObstacleGrid(SPEC, bad)


def test_write_pgm_header_and_payload(tmp_path):
    values = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = tmp_path / "grid.pgm"
    write_pgm(values, path)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n4 3\n255\n")
    assert blob[len(b"P5\n4 3\n255\n"):] == values.tobytes()


def test_write_pgm_scale255(tmp_path):
    values = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    path = tmp_path / "mask.pgm"
    write_pgm(values, path, scale255=True)
    payload = path.read_bytes().split(b"\n", 3)[3]
    assert payload == bytes([0, 255, 255, 0])
