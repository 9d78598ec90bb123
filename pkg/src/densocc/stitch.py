"""Two-stream multi-frame stitching.

Each frame is split by its annotated boxes. Static points are accumulated in
the world frame; object points are accumulated per instance in the box-local
frame, which removes the object's own motion. ``compose_frame`` re-places
both streams relative to a target frame.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import FrameRecord, SceneManifest, read_points, write_points
from .geometry import OrientedBox, PointCloud, apply_transform, concatenate, invert, points_in_box

DEFAULT_BOX_MARGIN = 0.1


class StitchError(ValueError):
    pass


@dataclass(eq=False)
class ObjectTrack:
    canonical_points: PointCloud
    class_id: int
    # frame ordinal -> sensor position in this instance's box-local frame
    sensor_origins: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(eq=False)
class AggregatedScene:
    static_world: PointCloud
    objects: dict[str, ObjectTrack]
    frame_sensor_origins: np.ndarray


def assign_boxes(points_ego: np.ndarray, boxes: list[OrientedBox], margin: float = DEFAULT_BOX_MARGIN) -> np.ndarray:
    """Index into ``boxes`` of the box owning each point, or -1 for static.

    Among containing boxes the one with the nearest center wins; ties go to the
    lexicographically smallest instance id.
    """
    n = len(points_ego)
    if not boxes or n == 0:
        return np.full(n, -1, np.int64)
    order = sorted(range(len(boxes)), key=lambda b: boxes[b].instance_id)
    dist = np.full((n, len(boxes)), np.inf)
    for col, b in enumerate(order):
        inside = points_in_box(points_ego, boxes[b], margin)
        d = np.linalg.norm(points_ego[inside] - boxes[b].center, axis=1)
        dist[inside, col] = d
    best = np.argmin(dist, axis=1)
    owner = np.asarray(order)[best]
    return np.where(np.isfinite(dist[np.arange(n), best]), owner, -1)


def segment_frame(points: PointCloud, frame: FrameRecord, margin: float = DEFAULT_BOX_MARGIN, self_radius=None):
    """Split a sensor-frame cloud into (static, {instance_id: object cloud}), both in ego frame.

    ``self_radius`` optionally drops returns within that distance of the ego origin.
    """
    ego = apply_transform(frame.lidar_extrinsic, points)
    if self_radius:
        ego = ego.subset(np.linalg.norm(ego.positions, axis=1) > self_radius)
    owner = assign_boxes(ego.positions, frame.boxes, margin)
    static = ego.subset(owner < 0)
    objects = {}
    for b, box in enumerate(frame.boxes):
        mask = owner == b
        if mask.any():
            objects[box.instance_id] = ego.subset(mask)
    return static, objects


def _check_instance_classes(frames: list[FrameRecord]) -> dict[str, int]:
    classes: dict[str, int] = {}
    for i, f in enumerate(frames):
        for box in f.boxes:
            seen = classes.setdefault(box.instance_id, box.class_id)
            if seen != box.class_id:
                raise StitchError(
                    f"instance {box.instance_id!r} changes class from {seen} to {box.class_id} at frame {i}"
                )
    return classes


def aggregate_scene(manifest: SceneManifest, clouds=None, margin: float = DEFAULT_BOX_MARGIN,
                    threads: int = 1, self_radius=None) -> AggregatedScene:
    """Stitch every frame of a scene. ``clouds`` defaults to loading each frame's points file."""
    classes = _check_instance_classes(manifest.frames)

    def work(i):
        frame = manifest.frames[i]
        cloud = clouds[i] if clouds is not None else manifest.load_points(i)
        if cloud.frame_index is None:
            cloud = PointCloud(cloud.positions, cloud.labels, cloud.intensities, np.full(len(cloud), i, np.uint32))
        static, objs = segment_frame(cloud, frame, margin, self_radius)
        static_w = apply_transform(frame.ego_pose, static)
        boxes = {b.instance_id: b for b in frame.boxes}
        sensor_ego = frame.lidar_extrinsic.translation
        local = {}
        for iid, obj in objs.items():
            box_from_ego = invert(boxes[iid].pose())
            local[iid] = apply_transform(box_from_ego, obj)
        origins = {iid: invert(b.pose()).apply(sensor_ego) for iid, b in boxes.items()}
        return static_w, local, origins

    n = len(manifest)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, range(n)))
    else:
        results = [work(i) for i in range(n)]

    static_world = concatenate([r[0] for r in results]) if results else PointCloud.empty()
    objects = {}
    for iid in sorted(classes):
        parts = [r[1][iid] for r in results if iid in r[1]]
        origins = {i: r[2][iid] for i, r in enumerate(results) if iid in r[2]}
        pts = concatenate(parts) if parts else PointCloud.empty(labels=True, frame_index=True)
        objects[iid] = ObjectTrack(pts, classes[iid], origins)
    sensor_origins = np.array([f.sensor_pose.translation for f in manifest.frames]).reshape(-1, 3)
    return AggregatedScene(static_world, objects, sensor_origins)


def compose_frame(agg: AggregatedScene, target: FrameRecord, return_origins: bool = False):
    """Merged cloud in the target ego frame: static world points plus every
    instance boxed in the target frame, placed at that box's pose.

    With ``return_origins`` also returns per-point sensor positions in the same
    frame, for orienting normals.
    """
    ego_from_world = invert(target.ego_pose)
    parts = [apply_transform(ego_from_world, agg.static_world)]
    origins = []
    if return_origins:
        fi = agg.static_world.frame_index
        origins.append(ego_from_world.apply(agg.frame_sensor_origins[fi]) if len(fi) else np.zeros((0, 3)))
    for box in sorted(target.boxes, key=lambda b: b.instance_id):
        track = agg.objects.get(box.instance_id)
        if track is None or len(track.canonical_points) == 0:
            continue
        pose = box.pose()
        parts.append(apply_transform(pose, track.canonical_points))
        if return_origins:
            frames, rows = np.unique(track.canonical_points.frame_index, return_inverse=True)
            table = np.array([track.sensor_origins[int(f)] for f in frames])
            origins.append(pose.apply(table[rows]))
    cloud = concatenate(parts)
    if return_origins:
        return cloud, np.concatenate(origins).reshape(-1, 3)
    return cloud


# ---------------------------------------------------------------- persistence

INDEX_NAME = "stitch.json"


def save_aggregated(agg: AggregatedScene, out_dir) -> None:
    out = Path(out_dir)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    write_points(out / "static.occp", agg.static_world)
    entries = []
    for k, (iid, track) in enumerate(agg.objects.items()):
        name = f"objects/object_{k:05d}.occp"
        write_points(out / name, track.canonical_points)
        entries.append(
            {
                "instance_id": iid,
                "class_id": track.class_id,
                "points": name,
                "sensor_origins": {str(f): [float(x) for x in o] for f, o in sorted(track.sensor_origins.items())},
            }
        )
    index = {
        "static": "static.occp",
        "frame_sensor_origins": [[float(x) for x in o] for o in agg.frame_sensor_origins],
        "objects": entries,
    }
    (out / INDEX_NAME).write_text(json.dumps(index, indent=1))


def load_aggregated(stitch_dir) -> AggregatedScene:
    d = Path(stitch_dir)
    index = json.loads((d / INDEX_NAME).read_text())
    objects = {}
    for e in index["objects"]:
        origins = {int(f): np.asarray(o, float) for f, o in e["sensor_origins"].items()}
        objects[e["instance_id"]] = ObjectTrack(read_points(d / e["points"]), int(e["class_id"]), origins)
    return AggregatedScene(
        read_points(d / index["static"]),
        objects,
        np.asarray(index["frame_sensor_origins"], float).reshape(-1, 3),
    )
