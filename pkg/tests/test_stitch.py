import numpy as np
import pytest

from densocc.fileio import FrameRecord, SceneManifest
from densocc.geometry import OrientedBox, PointCloud, RigidTransform, points_in_box
from densocc.stitch import (
    StitchError,
    aggregate_scene,
    assign_boxes,
    compose_frame,
    load_aggregated,
    save_aggregated,
    segment_frame,
)
from densocc.synth import AxisBox, BeamPattern, Plane, SyntheticSceneSpec, street_scene, synth_scene


def moving_box_scene(n=12):
    traj = [RigidTransform.from_yaw(0.05 * i, (0.4 * i, 0.1 * i, 0.0)) for i in range(n)]
    box = AxisBox((4, -1, 0.2), (8, 1, 1.7), 3, instance_id="car", velocity=(0.5, 0.2, 0.0))
    return SyntheticSceneSpec(
        [Plane(0.0, 1), box], traj, BeamPattern(360, -20, 10, 12, 30.0),
        RigidTransform(np.eye(3), (0.0, 0.0, 1.5)), ["free", "ground", "?", "car"],
    )


def test_assign_boxes_nearest_center_and_ties():
    a = OrientedBox((0, 0, 0), (4, 4, 4), 0.0, "b", 1)
    b = OrientedBox((1, 0, 0), (4, 4, 4), 0.0, "a", 1)
    c = OrientedBox((0, 0, 0), (4, 4, 4), 0.0, "a0", 1)
    pts = np.array([[1.2, 0, 0], [-1.5, 0, 0], [0.5, 0, 0], [9, 9, 9]])
    own = assign_boxes(pts, [a, b])
    assert own.tolist() == [1, 0, 1, -1]
    # equidistant from "b" and "a" at x = 0.5: lexicographically smaller id wins
    assert assign_boxes(pts[2:3], [a, b]).tolist() == [1]
    # identical boxes "b" and "a0": "a0" wins everywhere
    assert set(assign_boxes(pts[:3], [a, c]).tolist()) == {1}


def test_segment_frame_partitions_points():
    spec = street_scene(3)
    manifest, clouds = synth_scene(spec)
    static, objs = segment_frame(clouds[1], manifest.frames[1])
    assert len(static) + sum(len(o) for o in objs.values()) == len(clouds[1])
    assert set(objs) == {"car"}
    assert np.all(objs["car"].labels == 3)


def test_static_points_stack_in_world():
    spec = street_scene(8)
    manifest, clouds = synth_scene(spec)
    agg = aggregate_scene(manifest, clouds)
    sphere = agg.static_world.subset(agg.static_world.labels == 2)
    d = np.linalg.norm(sphere.positions - [3, 4, 1.5], axis=1) - 1.0
    assert np.abs(d).max() < 1e-9
    assert len(np.unique(sphere.frame_index)) == 8


def test_canonical_points_coincide_on_box_surface():
    spec = moving_box_scene()
    manifest, clouds = synth_scene(spec)
    agg = aggregate_scene(manifest, clouds)
    track = agg.objects["car"]
    size = np.array([4.0, 2.0, 1.5])
    q = np.abs(track.canonical_points.positions) - size / 2
    # every canonical point lies on the one fixed box surface
    assert np.abs(q.max(axis=1)).max() <= 1e-6
    assert len(np.unique(track.canonical_points.frame_index)) == len(manifest)


def test_compose_frame_places_object_inside_target_box():
    spec = moving_box_scene()
    manifest, clouds = synth_scene(spec)
    agg = aggregate_scene(manifest, clouds)
    for t in (0, 5, 11):
        frame = manifest.frames[t]
        cloud = compose_frame(agg, frame)
        car = cloud.subset(cloud.labels == 3)
        assert len(car) == len(agg.objects["car"].canonical_points)
        assert points_in_box(car.positions, frame.boxes[0], 0.1).all()


def test_compose_origins_align_with_points():
    spec = moving_box_scene(6)
    manifest, clouds = synth_scene(spec)
    agg = aggregate_scene(manifest, clouds)
    target = manifest.frames[3]
    cloud, origins = compose_frame(agg, target, return_origins=True)
    assert origins.shape == cloud.positions.shape
    # static origin of a frame-3 point is the frame-3 sensor in ego coordinates
    own = cloud.frame_index == 3
    assert np.allclose(origins[own & (cloud.labels == 1)], target.lidar_extrinsic.translation)
    # object origins: the sensor seen from the box, re-placed at the target box
    car3 = own & (cloud.labels == 3)
    assert np.allclose(origins[car3], target.lidar_extrinsic.translation)


def test_class_change_is_rejected():
    box0 = OrientedBox((5, 0, 0), (2, 2, 2), 0.0, "x", 1)
    box1 = OrientedBox((5, 0, 0), (2, 2, 2), 0.0, "x", 2)
    frames = [FrameRecord(i, RigidTransform(), RigidTransform(), "", [], [b]) for i, b in enumerate([box0, box1])]
    m = SceneManifest("s", frames, ["a", "b", "c"])
    with pytest.raises(StitchError, match="frame 1"):
        aggregate_scene(m, [PointCloud([[5.0, 0, 0]])] * 2)


def test_threads_do_not_change_result():
    spec = street_scene(6)
    manifest, clouds = synth_scene(spec)
    a = aggregate_scene(manifest, clouds, threads=1)
    b = aggregate_scene(manifest, clouds, threads=4)
    assert a.static_world.positions.tobytes() == b.static_world.positions.tobytes()
    assert a.objects["car"].canonical_points.positions.tobytes() == b.objects["car"].canonical_points.positions.tobytes()


def test_persistence_round_trip(tmp_path):
    spec = moving_box_scene(4)
    manifest, clouds = synth_scene(spec)
    agg = aggregate_scene(manifest, clouds)
    save_aggregated(agg, tmp_path)
    back = load_aggregated(tmp_path)
    assert np.abs(back.static_world.positions - agg.static_world.positions).max() < 1e-4
    assert np.array_equal(back.static_world.labels, agg.static_world.labels)
    assert back.objects["car"].class_id == 3
    assert set(back.objects["car"].sensor_origins) == set(range(4))
    np.testing.assert_allclose(back.frame_sensor_origins, agg.frame_sensor_origins)
