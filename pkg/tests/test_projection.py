import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densocc.fileio import BadMagicError
from densocc.geometry import CameraModel, GridSpec, RigidTransform
from densocc.projection import (
    FeatureMap,
    average_lift,
    bilinear_sample,
    hit_views,
    project_to_view,
    read_feature_map,
    write_feature_map,
)

# camera-from-ego for a camera at the ego origin looking along ego +x
FORWARD = np.array([[0.0, -1, 0], [0, 0, -1], [1, 0, 0]])


def cam(yaw=0.0, w=64, h=48, f=40.0):
    # camera rotated by yaw about ego z
    r = FORWARD @ RigidTransform.from_yaw(yaw).rotation.T
    return CameraModel(f, f, w / 2, h / 2, w, h, RigidTransform(r, (0, 0, 0)))


def test_project_hand_computed():
    c = cam()
    # point 10 m ahead, 1 m to the left (ego +y), 0.5 m up: camera x = -1, y = -0.5, z = 10
    u, v, z = project_to_view([10, 1, 0.5], c, RigidTransform())
    assert (u, v, z) == pytest.approx((32 - 4.0, 24 - 2.0, 10.0))
    assert project_to_view([-10, 0, 0], c, RigidTransform()) is None  # behind
    assert project_to_view([1, 5, 0], c, RigidTransform()) is None  # off-image


def test_ego_pose_is_applied():
    c = cam()
    pose = RigidTransform.from_yaw(np.pi / 2, (5, 5, 0))
    # ego +x is world +y, so a world point 10 m north of the ego sits straight ahead
    u, v, z = project_to_view([5, 15, 0], c, pose)
    assert (u, v, z) == pytest.approx((32, 24, 10))


def test_hit_views_ring():
    cams = [cam(yaw) for yaw in np.deg2rad([0, 90, 180, 270])]
    assert hit_views([10, 0, 0], cams, RigidTransform()) == {0}
    assert hit_views([0, -10, 0], cams, RigidTransform()) == {3}
    assert hit_views([0, 0, 10], cams, RigidTransform()) == set()


def test_bilinear_exact_on_affine_features(rng):
    h, w = 7, 9
    y, x = np.mgrid[0:h, 0:w]
    vals = np.stack([2 * x + 3 * y + 1, -x + 0.5 * y], axis=-1).astype(float)
    fm = FeatureMap(vals, stride=2.0)
    for _ in range(50):
        u, v = rng.uniform(0, 2 * (w - 1)), rng.uniform(0, 2 * (h - 1))
        fx, fy = u / 2, v / 2
        assert np.allclose(bilinear_sample(fm, u, v), [2 * fx + 3 * fy + 1, -fx + 0.5 * fy])
    # clamped outside the map
    assert np.allclose(bilinear_sample(fm, 1e3, -5), vals[0, -1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_bilinear_within_corner_range(seed):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(rng.normal(size=(5, 6, 1)))
    u, v = rng.uniform(-2, 8), rng.uniform(-2, 7)
    s = bilinear_sample(fm, u, v)[0]
    assert fm.values.min() - 1e-12 <= s <= fm.values.max() + 1e-12


def test_average_lift_matches_loop_oracle(rng):
    spec = GridSpec((-6, -6, -1), 1.0, (12, 12, 3))
    cams = [cam(yaw, 16, 12, 8.0) for yaw in np.deg2rad([0, 60, 120, 180, 240, 300])]
    fms = [FeatureMap(rng.normal(size=(6, 8, 3)), stride=2.0) for _ in cams]
    pose = RigidTransform.from_yaw(0.3, (0.2, -0.1, 0))
    lifted = average_lift(spec, fms, cams, pose).values.reshape(-1, 3)
    centers = spec.centers()
    hits = 0
    for n, p in enumerate(centers):
        samples = []
        for fm, c in zip(fms, cams):
            r = project_to_view(p, c, pose)
            if r is not None:
                samples.append(bilinear_sample(fm, r[0], r[1]))
        expected = np.mean(samples, axis=0) if samples else np.zeros(3)
        hits += bool(samples)
        assert np.allclose(lifted[n], expected, atol=1e-12)
    assert hits > len(centers) // 2


def test_average_lift_thread_invariant(rng):
    spec = GridSpec((-20, -20, -2), 0.5, (80, 80, 4))
    cams = [cam(yaw) for yaw in np.deg2rad([0, 120, 240])]
    fms = [FeatureMap(rng.normal(size=(24, 32, 4)), 2.0) for _ in cams]
    a = average_lift(spec, fms, cams, RigidTransform(), threads=1).values
    b = average_lift(spec, fms, cams, RigidTransform(), threads=4).values
    assert a.tobytes() == b.tobytes()


def test_average_lift_errors(rng):
    spec = GridSpec((0, 0, 0), 1.0, (2, 2, 2))
    with pytest.raises(ValueError):
        average_lift(spec, [FeatureMap(np.zeros((2, 2, 1)))], [], RigidTransform())
    with pytest.raises(ValueError):
        average_lift(spec, [FeatureMap(np.zeros((2, 2, 1))), FeatureMap(np.zeros((2, 2, 2)))],
                     [cam(), cam()], RigidTransform())


def test_feature_map_round_trip(tmp_path, rng):
    fm = FeatureMap(rng.normal(size=(3, 5, 2)).astype(np.float32), stride=4.0)
    write_feature_map(tmp_path / "f.occm", fm)
    back = read_feature_map(tmp_path / "f.occm")
    assert back.stride == 4.0 and np.array_equal(back.values, fm.values)
    (tmp_path / "g").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(BadMagicError):
        read_feature_map(tmp_path / "g")
