"""Hierarchical image localization.

Pipeline: global-descriptor retrieval -> mutual-nearest-neighbor local
matching (Lowe ratio 0.8) -> 3D-2D PnP inside a seeded RANSAC loop with
Gauss-Newton refinement on reprojection error -> point heatmap at the
recovered camera position.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MslmError
from .geometry import GridSpec, Intrinsics, Pose, back_project, voxel_index
from .heatmap import Heatmap, point_heatmap
from .providers import read_blob, write_blob

DEFAULT_RANSAC_ITERS = 1000
DEFAULT_REPROJ_TOL_PX = 3.0
MIN_INLIERS_CONFIDENT = 12
LOWE_RATIO = 0.8


@dataclass
class ReferenceFrame:
    global_descriptor: np.ndarray
    keypoints: np.ndarray          # (K, 2) pixel coords
    local_descriptors: np.ndarray  # (K, D), L2-normalized
    depth: np.ndarray              # (H, W)
    intrinsics: Intrinsics
    pose: Pose                     # camera-to-world


@dataclass
class Correspondence:
    world_point: np.ndarray
    query_pixel: np.ndarray


def retrieve_reference(query_global: np.ndarray, db):
    """Best frame by cosine similarity; ties go to the lowest frame index."""
    if not db:
        raise MslmError("reference database is empty")
    q = np.asarray(query_global, dtype=np.float64)
    q = q / np.linalg.norm(q)
    best_i, best_sim = 0, -np.inf
    for i, frame in enumerate(db):
        g = frame.global_descriptor
        sim = float(g @ q / np.linalg.norm(g))
        if sim > best_sim:
            best_i, best_sim = i, sim
    return db[best_i], best_sim


def match_local(query_keypoints: np.ndarray, query_descriptors: np.ndarray,
                ref: ReferenceFrame, ratio: float = LOWE_RATIO) -> list:
    """Mutual-nearest-neighbor matches passing the ratio test.

    Matched reference keypoints are back-projected through depth and pose to
    world points; keypoints with zero depth are skipped.
    """
    qd = np.asarray(query_descriptors, dtype=np.float64)
    rd = np.asarray(ref.local_descriptors, dtype=np.float64)
    if qd.shape[0] == 0 or rd.shape[0] == 0:
        return []
    # squared L2 distances
    d2 = (
        np.sum(qd**2, axis=1)[:, None]
        + np.sum(rd**2, axis=1)[None, :]
        - 2.0 * qd @ rd.T
    )
    nn_q = np.argmin(d2, axis=1)
    nn_r = np.argmin(d2, axis=0)
    matches = []
    for qi, ri in enumerate(nn_q):
        if nn_r[ri] != qi:
            continue
        if rd.shape[0] >= 2:
            row = d2[qi].copy()
            best = row[ri]
            row[ri] = np.inf
            second = row.min()
            if second > 0 and np.sqrt(max(best, 0.0)) > ratio * np.sqrt(second):
                continue
        u, v = ref.keypoints[ri]
        row_i, col_i = int(round(v)), int(round(u))
        if not (0 <= row_i < ref.depth.shape[0] and 0 <= col_i < ref.depth.shape[1]):
            continue
        depth = float(ref.depth[row_i, col_i])
        if depth <= 0:
            continue
        p_cam = back_project((u, v), depth, ref.intrinsics)
        matches.append(Correspondence(ref.pose.apply(p_cam),
                                      np.asarray(query_keypoints[qi], dtype=np.float64)))
    return matches


def _project(pose_cw: Pose, points: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Project world points through a world-to-camera pose to pixels."""
    p_cam = points @ pose_cw.rotation.T + pose_cw.translation
    z = p_cam[:, 2]
    z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    u = k.fx * p_cam[:, 0] / z + k.cx
    v = k.fy * p_cam[:, 1] / z + k.cy
    return np.stack([u, v], axis=1)


def _pnp_dlt(world: np.ndarray, pixels: np.ndarray, k: Intrinsics):
    """Direct linear transform for [R|t] (world-to-camera), >= 6 points."""
    n = world.shape[0]
    x = (pixels[:, 0] - k.cx) / k.fx
    y = (pixels[:, 1] - k.cy) / k.fy
    a = np.zeros((2 * n, 12))
    a[0::2, 0:3] = world
    a[0::2, 3] = 1.0
    a[0::2, 8:11] = -x[:, None] * world
    a[0::2, 11] = -x
    a[1::2, 4:7] = world
    a[1::2, 7] = 1.0
    a[1::2, 8:11] = -y[:, None] * world
    a[1::2, 11] = -y
    _u, _s, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    r, t = p[:, :3], p[:, 3]
    # fix scale/sign so points sit in front of the camera
    scale = np.linalg.det(r)
    if scale < 0:
        r, t = -r, -t
    u_r, s_r, vt_r = np.linalg.svd(r)
    r_ortho = u_r @ vt_r
    if np.linalg.det(r_ortho) < 0:
        u_r[:, -1] *= -1
        r_ortho = u_r @ vt_r
    t = t / s_r.mean()
    depths = world @ r_ortho.T[:, 2] + t[2]
    if np.median(depths) < 0:
        # DLT sign ambiguity: flip the solution
        flip = np.diag([-1.0, -1.0, 1.0])
        r_ortho = flip @ r_ortho
        t = flip @ t
        depths = world @ r_ortho.T[:, 2] + t[2]
        if np.median(depths) < 0:
            return None
    return r_ortho, t


def _refine_gn(r: np.ndarray, t: np.ndarray, world: np.ndarray,
               pixels: np.ndarray, k: Intrinsics, iters: int = 15):
    """Gauss-Newton on pixel reprojection error over (axis-angle, t)."""
    from scipy.spatial.transform import Rotation

    rvec = Rotation.from_matrix(r).as_rotvec()
    params = np.concatenate([rvec, t])
    for _ in range(iters):
        rot = Rotation.from_rotvec(params[:3]).as_matrix()
        tv = params[3:]
        p_cam = world @ rot.T + tv
        z = p_cam[:, 2]
        if np.any(z <= 1e-9):
            break
        u = k.fx * p_cam[:, 0] / z + k.cx
        v = k.fy * p_cam[:, 1] / z + k.cy
        res = np.concatenate([u - pixels[:, 0], v - pixels[:, 1]])
        # numeric Jacobian: 6 params, cheap at these sizes
        jac = np.zeros((res.size, 6))
        h = 1e-7
        for j in range(6):
            dp = params.copy()
            dp[j] += h
            rot_j = Rotation.from_rotvec(dp[:3]).as_matrix()
            p_j = world @ rot_j.T + dp[3:]
            z_j = np.where(p_j[:, 2] < 1e-12, 1e-12, p_j[:, 2])
            u_j = k.fx * p_j[:, 0] / z_j + k.cx
            v_j = k.fy * p_j[:, 1] / z_j + k.cy
            jac[:, j] = (np.concatenate([u_j - pixels[:, 0], v_j - pixels[:, 1]])
                         - res) / h
        try:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        params = params + step
        if np.linalg.norm(step) < 1e-12:
            break
    rot = Rotation.from_rotvec(params[:3]).as_matrix()
    return rot, params[3:]


def pnp_ransac(correspondences, k: Intrinsics,
               iters: int = DEFAULT_RANSAC_ITERS,
               reproj_tol_px: float = DEFAULT_REPROJ_TOL_PX,
               rng: np.random.Generator = None):
    """Robust camera pose from 3D-2D correspondences.

    Returns ``(pose_camera_to_world, inlier_indices)`` or None when there are
    fewer than 4 points or no consensus is found.  Deterministic for a fixed
    generator.
    """
    corr = list(correspondences)
    if len(corr) < 4:
        return None
    rng = rng if rng is not None else np.random.default_rng(0)
    world = np.stack([c.world_point for c in corr])
    pixels = np.stack([c.query_pixel for c in corr])
    n = world.shape[0]
    sample_size = min(6, n)

    best_inliers = None
    for _ in range(iters):
        pick = rng.choice(n, size=sample_size, replace=False)
        if sample_size < 6:
            pick = np.concatenate([pick, rng.choice(n, size=6 - sample_size)])
        fit = _pnp_dlt(world[pick], pixels[pick], k)
        if fit is None:
            continue
        r, t = fit
        p_cam = world @ r.T + t
        z = p_cam[:, 2]
        ok_z = z > 1e-9
        u = k.fx * p_cam[:, 0] / np.where(ok_z, z, 1.0) + k.cx
        v = k.fy * p_cam[:, 1] / np.where(ok_z, z, 1.0) + k.cy
        err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
        inliers = np.flatnonzero(ok_z & (err < reproj_tol_px))
        if best_inliers is None or inliers.size > best_inliers.size:
            best_inliers = inliers
            best_fit = (r, t)
        if inliers.size == n:
            break
    if best_inliers is None or best_inliers.size < 6:
        return None
    r, t = best_fit
    r, t = _refine_gn(r, t, world[best_inliers], pixels[best_inliers], k)
    # recompute consensus after refinement
    p_cam = world @ r.T + t
    z = np.where(p_cam[:, 2] < 1e-12, 1e-12, p_cam[:, 2])
    u = k.fx * p_cam[:, 0] / z + k.cx
    v = k.fy * p_cam[:, 1] / z + k.cy
    err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
    inliers = np.flatnonzero((p_cam[:, 2] > 1e-9) & (err < reproj_tol_px))
    if inliers.size < 4:
        return None
    pose_wc = Pose(r, t)            # world -> camera
    return pose_wc.inverse(), inliers


def localize_image(query_global, query_keypoints, query_descriptors, db,
                   k: Intrinsics, eps: float, spec: GridSpec,
                   rng: np.random.Generator = None,
                   min_inliers: int = MIN_INLIERS_CONFIDENT):
    """Full hierarchical localization to a point heatmap.

    Returns ``(heatmap, success)``; on failure the heatmap is all-zero.
    """
    zero = Heatmap(spec, np.zeros(spec.shape), eps)
    try:
        ref, _sim = retrieve_reference(query_global, db)
    except MslmError:
        return zero, False
    corr = match_local(query_keypoints, query_descriptors, ref)
    result = pnp_ransac(corr, k, rng=rng)
    if result is None:
        return zero, False
    pose, inliers = result
    if inliers.size < min_inliers:
        return zero, False
    idx = voxel_index(pose.translation, spec)
    if idx is None:
        return zero, False
    return point_heatmap(np.array(idx, dtype=np.float64), eps, spec), True


def save_reference_db(db, root):
    """Manifest-indexed per-frame descriptor blobs under ``root``."""
    os.makedirs(root, exist_ok=True)
    frames = []
    for i, f in enumerate(db):
        entry = {}
        for name, arr in (
            ("global", f.global_descriptor), ("keypoints", f.keypoints),
            ("descriptors", f.local_descriptors), ("depth", f.depth),
        ):
            rel = f"frame{i:05d}_{name}.blob"
            write_blob(os.path.join(root, rel), np.asarray(arr))
            entry[name] = rel
        entry["intrinsics"] = [f.intrinsics.fx, f.intrinsics.fy,
                               f.intrinsics.cx, f.intrinsics.cy]
        entry["pose"] = np.concatenate(
            [f.pose.rotation.reshape(-1), f.pose.translation]
        ).tolist()
        frames.append(entry)
    with open(os.path.join(root, "manifest.json"), "w") as fp:
        json.dump({"frames": frames}, fp)


def load_reference_db(root) -> list:
    with open(os.path.join(root, "manifest.json")) as fp:
        manifest = json.load(fp)
    db = []
    for entry in manifest["frames"]:
        pose_vals = np.array(entry["pose"])
        db.append(ReferenceFrame(
            global_descriptor=read_blob(os.path.join(root, entry["global"])),
            keypoints=read_blob(os.path.join(root, entry["keypoints"])),
            local_descriptors=read_blob(os.path.join(root, entry["descriptors"])),
            depth=read_blob(os.path.join(root, entry["depth"])),
            intrinsics=Intrinsics(*entry["intrinsics"]),
            pose=Pose(pose_vals[:9].reshape(3, 3), pose_vals[9:]),
        ))
    return db
