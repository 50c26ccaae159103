import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslm.errors import InvalidDepthError
from mslm.geometry import (GridSpec, Intrinsics, Pose, back_project,
                           back_project_many, project_to_grid, to_world,
                           voxel_index, voxel_indices)

K = Intrinsics(fx=320.0, fy=300.0, cx=159.5, cy=119.5)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_back_project_principal_ray():
    p = back_project((K.cx, K.cy), 2.0, K)
    assert np.allclose(p, [0.0, 0.0, 2.0])


def test_back_project_unit_lateral_offset():
    p = back_project((K.cx + K.fx, K.cy), 1.0, K)
    assert np.allclose(p, [1.0, 0.0, 1.0])


def test_back_project_rejects_nonpositive_depth():
    with pytest.raises(InvalidDepthError):
        back_project((10, 10), 0.0, K)
    with pytest.raises(InvalidDepthError):
        back_project((10, 10), -1.0, K)


def test_back_project_reprojection_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(200):
        u = rng.uniform(0, 320), rng.uniform(0, 240)
        depth = rng.uniform(0.1, 10.0)
        p = back_project(u, depth, K)
        proj = K.matrix @ p
        assert abs(proj[0] / proj[2] - u[0]) < 1e-9
        assert abs(proj[1] / proj[2] - u[1]) < 1e-9


def test_back_project_many_matches_scalar():
    rng = np.random.default_rng(2)
    us = rng.uniform(0, 300, size=(50, 2))
    depths = rng.uniform(0.1, 5.0, size=50)
    batch = back_project_many(us, depths, K)
    for i in range(50):
        assert np.allclose(batch[i], back_project(us[i], depths[i], K))


def test_pose_identity_and_translation():
    assert np.allclose(to_world(np.array([1.0, 2.0, 3.0]), Pose.identity()),
                       [1.0, 2.0, 3.0])
    t = Pose(np.eye(3), [1.0, 2.0, 3.0])
    assert np.allclose(to_world(np.zeros(3), t), [1.0, 2.0, 3.0])


def test_pose_inverse_recovers_points():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pose = Pose(random_rotation(rng), rng.standard_normal(3))
        p = rng.standard_normal(3)
        assert np.allclose(pose.inverse().apply(pose.apply(p)), p, atol=1e-12)


def test_pose_composition_associative():
    rng = np.random.default_rng(4)
    a, b, c = (Pose(random_rotation(rng), rng.standard_normal(3))
               for _ in range(3))
    left = a.compose(b).compose(c)
    right = a.compose(b.compose(c))
    assert np.allclose(left.rotation, right.rotation, atol=1e-12)
    assert np.allclose(left.translation, right.translation, atol=1e-12)


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        # reflection: orthonormal but det -1
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(0, 10, 10, 0.05)
    with pytest.raises(ValueError):
        GridSpec(10, 10, 10, 0.0)


def test_project_origin_maps_to_center():
    spec = GridSpec(1000, 1000, 60, 0.05)
    assert project_to_grid(np.array([0.0, 0.5, 0.0]), spec) == (500, 500)


def test_project_direct_evaluation():
    spec = GridSpec(1000, 1000, 60, 0.05)
    assert project_to_grid(np.array([1.0, 0.0, 2.0]), spec) == (520, 460)


def test_project_out_of_bounds_reported():
    spec = GridSpec(100, 100, 10, 0.05)
    assert project_to_grid(np.array([-100 * 0.05, 0.0, 0.0]), spec) is None


def test_grid_index_formula_oracle():
    """1000 random world points against direct hand evaluation of the
    center-offset floor formula."""
    spec = GridSpec(1000, 1000, 60, 0.05)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-20, 20, size=(1000, 3))
    pts[:, 1] = rng.uniform(0, 2.5, size=1000)
    for p in pts:
        px = int(np.floor(spec.h / 2 + p[0] / spec.scale + 0.5))
        py = int(np.floor(spec.w / 2 - p[2] / spec.scale + 0.5))
        pz = int(np.floor(p[1] / spec.scale + 0.5))
        got = voxel_index(p, spec)
        if 0 <= px < spec.h and 0 <= py < spec.w and 0 <= pz < spec.z:
            assert got == (px, py, pz)
        else:
            assert got is None
        got2 = project_to_grid(p, spec)
        if 0 <= px < spec.h and 0 <= py < spec.w:
            assert got2 == (px, py)
        else:
            assert got2 is None


def test_voxel_height_examples():
    spec = GridSpec(100, 100, 60, 0.05)
    assert voxel_index(np.array([0.0, 0.0, 0.0]), spec)[2] == 0
    assert voxel_index(np.array([0.0, 0.05, 0.0]), spec)[2] == 1


def test_voxel_indices_matches_scalar():
    spec = GridSpec(64, 64, 20, 0.1)
    rng = np.random.default_rng(6)
    pts = rng.uniform(-4, 4, size=(500, 3))
    pts[:, 1] = rng.uniform(-0.5, 2.5, size=500)
    idx, ok = voxel_indices(pts, spec)
    for i in range(500):
        scalar = voxel_index(pts[i], spec)
        if scalar is None:
            assert not ok[i]
        else:
            assert ok[i] and tuple(idx[i]) == scalar


@given(x=st.floats(-10, 10), z=st.floats(-10, 10))
@settings(max_examples=100, deadline=None)
def test_translation_covariance(x, z):
    spec = GridSpec(1000, 1000, 10, 0.05)
    a = project_to_grid(np.array([x, 0.0, z]), spec)
    b = project_to_grid(np.array([x + spec.scale, 0.0, z]), spec)
    if a is not None and b is not None:
        assert b[0] == a[0] + 1 and b[1] == a[1]


def test_cell_center_inverts_voxel_index():
    spec = GridSpec(64, 64, 20, 0.1)
    for idx in [(0, 0, 0), (32, 32, 10), (63, 1, 19)]:
        assert voxel_index(spec.cell_center(idx), spec) == idx


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)
