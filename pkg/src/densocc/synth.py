"""Ray-cast LiDAR simulation over analytic primitives, plus the matching
analytic surface-occupancy oracle used by tests and demos."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fileio import FrameRecord, SceneManifest
from .geometry import GridSpec, LabelGrid, OrientedBox, PointCloud, RigidTransform, invert

RAY_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    class_id: int
    instance_id: str | None = None
    velocity: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def bounds(self, offset):
        c = np.asarray(self.center, float) + offset
        return c - self.radius, c + self.radius

    def intersect(self, origin, dirs, offset):
        oc = origin - (np.asarray(self.center, float) + offset)
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        t = np.full(len(dirs), np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(hit & (t_near > RAY_EPS), t_near, t)
        t = np.where(hit & (t_near <= RAY_EPS) & (t_far > RAY_EPS), t_far, t)
        return t

    def signed_distance(self, p, offset):
        return np.linalg.norm(p - (np.asarray(self.center, float) + offset), axis=1) - self.radius


@dataclass(frozen=True)
class AxisBox:
    min: tuple
    max: tuple
    class_id: int
    instance_id: str | None = None
    velocity: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not np.all(np.asarray(self.max, float) > np.asarray(self.min, float)):
            raise ValueError("axis box max must exceed min on every axis")

    def bounds(self, offset):
        return np.asarray(self.min, float) + offset, np.asarray(self.max, float) + offset

    def intersect(self, origin, dirs, offset):
        lo, hi = self.bounds(offset)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = dirs == 0
        inside = (origin >= lo) & (origin <= hi)
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        t = np.where(tmin > RAY_EPS, tmin, tmax)
        return np.where((tmax >= tmin) & (t > RAY_EPS), t, np.inf)

    def signed_distance(self, p, offset):
        lo, hi = self.bounds(offset)
        c = (lo + hi) / 2
        h = (hi - lo) / 2
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Plane:
    """Horizontal plane z = height; signed distance positive above."""

    z: float
    class_id: int
    instance_id: None = None
    velocity: tuple = (0.0, 0.0, 0.0)

    def intersect(self, origin, dirs, offset):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - origin[2]) / dirs[:, 2]
        return np.where(np.isfinite(t) & (t > RAY_EPS), t, np.inf)

    def signed_distance(self, p, offset):
        return p[:, 2] - self.z


@dataclass(frozen=True)
class BeamPattern:
    azimuth_steps: int = 360
    elevation_min_deg: float = -30.0
    elevation_max_deg: float = 10.0
    elevation_steps: int = 32
    max_range: float = 50.0

    def __post_init__(self):
        if self.azimuth_steps < 1 or self.elevation_steps < 1:
            raise ValueError("beam steps must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    def directions(self) -> np.ndarray:
        az = np.arange(self.azimuth_steps) * (2 * np.pi / self.azimuth_steps)
        if self.elevation_steps == 1:
            el = np.array([np.deg2rad(self.elevation_min_deg)])
        else:
            el = np.deg2rad(np.linspace(self.elevation_min_deg, self.elevation_max_deg, self.elevation_steps))
        e, a = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)
        return d.reshape(-1, 3)


@dataclass
class SyntheticSceneSpec:
    """Static or constant-velocity primitives observed from a list of ego poses.

    Primitives with an ``instance_id`` are annotated with a box in every frame;
    ``velocity`` is in metres per frame.
    """

    primitives: list
    sensor_trajectory: list[RigidTransform]
    beams: BeamPattern = field(default_factory=BeamPattern)
    lidar_extrinsic: RigidTransform = field(default_factory=RigidTransform)
    class_names: list[str] | None = None
    frame_interval_us: int = 50_000
    scene_id: str = "synthetic"

    def offset(self, prim, frame: int) -> np.ndarray:
        return np.asarray(prim.velocity, float) * frame


def raycast(spec: SyntheticSceneSpec, frame: int):
    """Cast the beam pattern from the frame's sensor pose; returns world hits and class ids."""
    pose = spec.sensor_trajectory[frame] @ spec.lidar_extrinsic
    dirs = pose.rotation @ spec.beams.directions().T
    dirs = dirs.T
    origin = pose.translation
    best_t = np.full(len(dirs), np.inf)
    best_cls = np.zeros(len(dirs), np.uint16)
    for prim in spec.primitives:
        t = prim.intersect(origin, dirs, spec.offset(prim, frame))
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_cls = np.where(closer, prim.class_id, best_cls)
    keep = best_t <= spec.beams.max_range
    hits = origin + dirs[keep] * best_t[keep, None]
    return hits, best_cls[keep]


def _ego_yaw(pose: RigidTransform) -> float:
    r = pose.rotation
    if not np.allclose(r[2], [0.0, 0.0, 1.0], atol=1e-9):
        raise ValueError("boxed instances require ego poses that rotate only about z")
    return float(np.arctan2(r[1, 0], r[0, 0]))


def synth_scene(spec: SyntheticSceneSpec, points_name="frame_{:04d}.occp"):
    """Simulate every frame; returns (manifest, list of sensor-frame PointClouds)."""
    names = spec.class_names
    if names is None:
        top = max([p.class_id for p in spec.primitives], default=0)
        names = ["free"] + [f"class_{i}" for i in range(1, top + 1)]
    frames = []
    clouds = []
    for f, ego in enumerate(spec.sensor_trajectory):
        hits, cls = raycast(spec, f)
        sensor_from_world = invert(ego @ spec.lidar_extrinsic)
        clouds.append(
            PointCloud(
                sensor_from_world.apply(hits),
                labels=cls,
                frame_index=np.full(len(hits), f, np.uint32),
            )
        )
        boxes = []
        boxed = [p for p in spec.primitives if p.instance_id is not None]
        if boxed:
            ego_from_world = invert(ego)
            yaw = -_ego_yaw(ego)
            for p in boxed:
                lo, hi = p.bounds(spec.offset(p, f))
                boxes.append(
                    OrientedBox(ego_from_world.apply((lo + hi) / 2), hi - lo, yaw, p.instance_id, p.class_id)
                )
        frames.append(
            FrameRecord(
                f * spec.frame_interval_us,
                ego,
                spec.lidar_extrinsic,
                points_name.format(f),
                [],
                boxes,
            )
        )
    return SceneManifest(spec.scene_id, frames, list(names)), clouds


def analytic_occupancy(spec: SyntheticSceneSpec, grid: GridSpec, shell: float, frame: int | None = None) -> LabelGrid:
    """Label voxels whose center lies in the band -shell <= d < shell around a primitive surface.

    With ``frame=None`` the grid is in world coordinates and primitives sit at
    their frame-0 positions; otherwise the grid is in that frame's ego coordinates.
    Overlaps go to the smallest class id.
    """
    if not shell > 0:
        raise ValueError("shell must be positive")
    centers = grid.centers()
    f = 0
    if frame is not None:
        f = frame
        centers = spec.sensor_trajectory[frame].apply(centers)
    out = np.zeros(len(centers), np.uint16)
    for prim in sorted(spec.primitives, key=lambda p: -p.class_id):
        d = prim.signed_distance(centers, spec.offset(prim, f))
        out[(d >= -shell) & (d < shell)] = prim.class_id
    return LabelGrid(grid, out.reshape(grid.dims))


def _pose_list(values):
    return [RigidTransform.from_matrix(v) for v in values]


def spec_from_json(d: dict) -> SyntheticSceneSpec:
    prims = []
    for p in d.get("primitives", []):
        kind = p["type"]
        common = dict(class_id=int(p["class_id"]))
        if kind == "sphere":
            prims.append(
                Sphere(tuple(p["center"]), float(p["radius"]), instance_id=p.get("instance_id"),
                       velocity=tuple(p.get("velocity", (0, 0, 0))), **common)
            )
        elif kind in ("box", "axis-box", "axis_box"):
            prims.append(
                AxisBox(tuple(p["min"]), tuple(p["max"]), instance_id=p.get("instance_id"),
                        velocity=tuple(p.get("velocity", (0, 0, 0))), **common)
            )
        elif kind == "plane":
            prims.append(Plane(float(p["z"]), **common))
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    beams = BeamPattern(**d.get("beams", {}))
    extr = RigidTransform.from_matrix(d["lidar_extrinsic"]) if "lidar_extrinsic" in d else RigidTransform()
    return SyntheticSceneSpec(
        prims,
        _pose_list(d["trajectory"]),
        beams,
        extr,
        d.get("class_names"),
        int(d.get("frame_interval_us", 50_000)),
        d.get("scene_id", "synthetic"),
    )


def spec_to_json(spec: SyntheticSceneSpec) -> dict:
    prims = []
    for p in spec.primitives:
        if isinstance(p, Sphere):
            d = {"type": "sphere", "center": list(p.center), "radius": p.radius}
        elif isinstance(p, AxisBox):
            d = {"type": "box", "min": list(p.min), "max": list(p.max)}
        else:
            d = {"type": "plane", "z": p.z}
        d["class_id"] = p.class_id
        if p.instance_id is not None:
            d["instance_id"] = p.instance_id
        if any(p.velocity):
            d["velocity"] = list(p.velocity)
        prims.append(d)
    b = spec.beams
    return {
        "scene_id": spec.scene_id,
        "primitives": prims,
        "trajectory": [t.matrix().reshape(-1).tolist() for t in spec.sensor_trajectory],
        "lidar_extrinsic": spec.lidar_extrinsic.matrix().reshape(-1).tolist(),
        "beams": {
            "azimuth_steps": b.azimuth_steps,
            "elevation_min_deg": b.elevation_min_deg,
            "elevation_max_deg": b.elevation_max_deg,
            "elevation_steps": b.elevation_steps,
            "max_range": b.max_range,
        },
        "class_names": spec.class_names,
        "frame_interval_us": spec.frame_interval_us,
    }


def street_scene(n_frames: int = 40) -> SyntheticSceneSpec:
    """Ground plane, a floating sphere and a car-sized box driving past a
    moving ego vehicle with a roof-mounted LiDAR."""
    traj = [
        RigidTransform.from_yaw(0.01 * (i - n_frames / 2), (-5 + 10 * i / max(n_frames - 1, 1), 0.3 * np.sin(i / 7), 0))
        for i in range(n_frames)
    ]
    prims = [
        Plane(0.0, 1),
        Sphere((3.0, 4.0, 1.5), 1.0, 2),
        AxisBox((-8.0, -5.0, 0.3), (-4.0, -3.0, 1.8), 3, instance_id="car", velocity=(6.0 / n_frames, 0.0, 0.0)),
    ]
    return SyntheticSceneSpec(
        prims, traj, BeamPattern(360, -25, 5, 16, 25.0),
        RigidTransform(np.eye(3), (0.0, 0.0, 1.8)),
        class_names=["free", "ground", "sphere", "car"],
        scene_id="street",
    )


STREET_GRID = GridSpec((-10.0, -10.0, -1.25), 0.5, (40, 40, 8))


def sphere_views(radius: float = 2.0, distance: float = 6.0, hemisphere_only: bool = False,
                 azimuth_steps: int = 192, elevation_steps: int = 90) -> SyntheticSceneSpec:
    """A sphere at the origin seen from viewpoints spread over a surrounding sphere.

    With ``hemisphere_only`` the viewpoints below the equator are withheld.
    """
    views = []
    for el in (-50.0, 0.0, 50.0):
        for az in range(0, 360, 60):
            e, a = np.deg2rad(el), np.deg2rad(az)
            d = np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
            if hemisphere_only and d[2] < -0.1:
                continue
            views.append(RigidTransform(np.eye(3), distance * d))
    half_angle = np.rad2deg(np.arcsin(radius / distance)) + 1.0
    beams = BeamPattern(azimuth_steps, -half_angle - 50, half_angle + 50, elevation_steps, 4 * distance)
    return SyntheticSceneSpec([Sphere((0.0, 0.0, 0.0), radius, 1)], views, beams, scene_id="sphere")
