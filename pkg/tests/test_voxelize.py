from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from densocc.geometry import CameraModel, GridSpec, PointCloud, RigidTransform, TriangleMesh
from densocc.voxelize import (
    DepthMap,
    occupancy_to_points,
    read_depth_dir,
    tsdf_fuse,
    voxelize_mesh,
    voxelize_points,
    write_depth_map,
)


def lp_overlap(tri, lo, hi):
    """Triangle/box intersection as an LP feasibility problem over barycentric weights."""
    a_ub = np.vstack([tri.T, -tri.T])
    b_ub = np.concatenate([hi, -lo])
    res = linprog(np.zeros(3), A_ub=a_ub, b_ub=b_ub, A_eq=np.ones((1, 3)), b_eq=[1.0], bounds=[(0, None)] * 3,
                  method="highs")
    return res.status == 0


def test_conservative_matches_lp_oracle(rng):
    spec = GridSpec((-1.0, 0.5, 2.0), 0.5, (6, 5, 6))
    lo_w = spec.origin
    hi_w = spec.origin + spec.extent
    verts = rng.uniform(lo_w - 0.3, hi_w + 0.3, (18, 3))
    faces = np.arange(18).reshape(6, 3)
    grid = voxelize_mesh(TriangleMesh(verts, faces), spec)
    ijk = np.indices(spec.dims).reshape(3, -1).T
    expected = np.zeros(spec.n_voxels, bool)
    for n, (i, j, k) in enumerate(ijk):
        lo = spec.origin + np.array([i, j, k]) * spec.voxel_size
        hi = lo + spec.voxel_size
        expected[n] = any(lp_overlap(verts[f], lo, hi) for f in faces)
    assert np.array_equal(grid.labels.ravel() > 0, expected)
    assert expected.sum() > 10


def test_flat_square_on_voxel_face_touches_both_layers():
    spec = GridSpec((0, 0, 0), 1.0, (4, 4, 4))
    v = np.array([[0.5, 0.5, 2.0], [3.5, 0.5, 2.0], [3.5, 3.5, 2.0], [0.5, 3.5, 2.0]])
    mesh = TriangleMesh(v, [[0, 1, 2], [0, 2, 3]])
    occ = voxelize_mesh(mesh, spec).labels > 0
    assert occ[:, :, 1].all() and occ[:, :, 2].all()
    assert not occ[:, :, 0].any() and not occ[:, :, 3].any()


def test_vertex_mode_subset_of_conservative(rng):
    spec = GridSpec((0, 0, 0), 0.25, (12, 12, 12))
    mesh = TriangleMesh(rng.uniform(0, 3, (30, 3)), rng.integers(0, 30, (20, 3)))
    cons = voxelize_mesh(mesh, spec).labels > 0
    vert = voxelize_mesh(mesh, spec, mode="vertices").labels > 0
    assert np.all(cons[vert])
    assert vert.sum() <= 30 and cons.sum() > vert.sum()
    with pytest.raises(ValueError):
        voxelize_mesh(mesh, spec, mode="nope")


def test_empty_mesh_gives_empty_grid():
    spec = GridSpec((0, 0, 0), 1.0, (2, 2, 2))
    assert not voxelize_mesh(TriangleMesh.empty(), spec).labels.any()


def test_threads_give_same_grid(rng):
    spec = GridSpec((0, 0, 0), 0.05, (40, 40, 40))
    mesh = TriangleMesh(rng.uniform(0, 2, (900, 3)), np.arange(900).reshape(300, 3))
    a = voxelize_mesh(mesh, spec, threads=1)
    b = voxelize_mesh(mesh, spec, threads=3)
    assert np.array_equal(a.labels, b.labels)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 400))
def test_voxelize_points_majority_matches_counter(seed, n):
    rng = np.random.default_rng(seed)
    spec = GridSpec((0, 0, 0), 1.0, (3, 3, 3))
    pts = rng.uniform(-0.5, 3.5, (n, 3))
    labels = rng.integers(1, 4, n).astype(np.uint16)
    grid = voxelize_points(PointCloud(pts, labels=labels), spec)
    votes = {}
    for p, lab in zip(pts, labels):
        key = tuple(int(x) for x in np.floor(p))
        if all(0 <= c < 3 for c in key):
            votes.setdefault(key, Counter())[int(lab)] += 1
    expected = np.zeros((3, 3, 3), np.uint16)
    for key, c in votes.items():
        top = max(c.values())
        expected[key] = min(lab for lab, cnt in c.items() if cnt == top)
    assert np.array_equal(grid.labels, expected)


def test_voxelize_points_rejects_unlabeled():
    spec = GridSpec((0, 0, 0), 1.0, (2, 2, 2))
    with pytest.raises(ValueError, match="2 points"):
        voxelize_points(PointCloud(np.zeros((3, 3)), labels=[0, 1, 0]), spec)


def test_occupancy_to_points_centers():
    spec = GridSpec((0, 0, 0), 0.5, (2, 2, 2))
    labels = np.zeros((2, 2, 2), np.uint16)
    labels[1, 0, 1] = 7
    from densocc.geometry import LabelGrid

    cloud = occupancy_to_points(LabelGrid(spec, labels))
    assert np.array_equal(cloud.positions, [[0.75, 0.25, 0.75]]) and cloud.labels.tolist() == [7]


def wall_view(depth=3.0, yaw=0.0):
    # camera at ego origin looking along +x (camera z = ego x), wall at x = depth
    r = np.array([[0.0, -1, 0], [0, 0, -1], [1, 0, 0]])
    cam = CameraModel(20.0, 20.0, 16.0, 16.0, 32, 32, RigidTransform(r, (0, 0, 0)))
    return DepthMap(32, 32, np.full(32 * 32, depth), cam, RigidTransform.from_yaw(yaw))


def test_tsdf_single_wall_hand_oracle():
    spec = GridSpec((0, -0.5, -0.5), 0.25, (20, 4, 4))
    grid = tsdf_fuse([wall_view(3.0)], spec)
    occ = grid.labels > 0
    # every voxel column sits well inside the frustum; occupied iff |3 - x| < s
    x = spec.centers()[:, 0].reshape(spec.dims)
    assert np.array_equal(occ, np.abs(3.0 - x) < 0.25)


def test_tsdf_order_independent_and_io(tmp_path):
    maps = [wall_view(3.0), wall_view(3.1, 0.02), wall_view(2.9, -0.03)]
    spec = GridSpec((0, -0.5, -0.5), 0.1, (40, 10, 10))
    a = tsdf_fuse(maps, spec)
    b = tsdf_fuse(maps[::-1], spec)
    assert a.labels.tobytes() == b.labels.tobytes()
    for n, dm in enumerate(maps):
        write_depth_map(tmp_path / f"view_{n}", dm)
    back = read_depth_dir(tmp_path)
    assert len(back) == 3
    assert np.array_equal(tsdf_fuse(back, spec).labels, a.labels)


def test_tsdf_requires_maps():
    with pytest.raises(ValueError):
        tsdf_fuse([], GridSpec((0, 0, 0), 1.0, (2, 2, 2)))
