"""Geometric types shared by every pipeline stage.

Conventions: right-handed, z-up. Ego poses are world-from-ego, LiDAR
extrinsics are ego-from-sensor, camera extrinsics are camera-from-ego with
the camera looking along +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ORTHONORMAL_TOL = 1e-9


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormality_error(rotation: np.ndarray) -> float:
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(rot_z(yaw), np.asarray(translation, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_valid(self, tol: float = ORTHONORMAL_TOL) -> bool:
        return (
            bool(np.all(np.isfinite(self.rotation)))
            and bool(np.all(np.isfinite(self.translation)))
            and orthonormality_error(self.rotation) <= tol
            and np.linalg.det(self.rotation) > 0
        )

    def apply(self, points) -> np.ndarray:
        """Map an (N, 3) array (or a single 3-vector) by p -> R p + t."""
        p = np.asarray(points, dtype=np.float64)
        r, t = self.rotation, self.translation
        # elementwise rather than matmul: results must not depend on batch size
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.stack(
            [x * r[i, 0] + y * r[i, 1] + z * r[i, 2] + t[i] for i in range(3)],
            axis=-1,
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def inverse(self) -> RigidTransform:
        return invert(self)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return the transform p -> a(b(p))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions in metres plus optional per-point attributes.

    ``labels`` are uint16 class ids (0 = unlabeled), ``frame_index`` holds the
    ordinal of the source frame so the sensor origin of each point can be found.
    """

    positions: np.ndarray
    labels: np.ndarray | None = None
    intensities: np.ndarray | None = None
    frame_index: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions contain non-finite values")
        object.__setattr__(self, "positions", pos)
        n = len(pos)
        for name, dtype in (("labels", np.uint16), ("intensities", np.float32), ("frame_index", np.uint32)):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr.astype(dtype, copy=False))

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, mask_or_index) -> PointCloud:
        def take(a):
            return None if a is None else a[mask_or_index]

        return PointCloud(
            self.positions[mask_or_index],
            take(self.labels),
            take(self.intensities),
            take(self.frame_index),
        )

    def with_positions(self, positions) -> PointCloud:
        return replace(self, positions=positions)

    @classmethod
    def empty(cls, labels=False, intensities=False, frame_index=False) -> PointCloud:
        return cls(
            np.zeros((0, 3)),
            np.zeros(0, np.uint16) if labels else None,
            np.zeros(0, np.float32) if intensities else None,
            np.zeros(0, np.uint32) if frame_index else None,
        )


def concatenate(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds in order; an attribute survives only if every input has it."""
    if not clouds:
        return PointCloud.empty()

    def cat(name):
        arrs = [getattr(c, name) for c in clouds]
        if any(a is None for a in arrs):
            return None
        return np.concatenate(arrs)

    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        cat("labels"),
        cat("intensities"),
        cat("frame_index"),
    )


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    pos = t.apply(cloud.positions)
    if not np.all(np.isfinite(pos)):
        raise ValueError("transform produced non-finite positions (corrupt input)")
    return cloud.with_positions(pos)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Annotated box; size is (length along heading x, width along y, height along z)."""

    center: np.ndarray
    size: np.ndarray
    yaw: float
    instance_id: str
    class_id: int

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not np.all(size > 0):
            raise ValueError(f"box {self.instance_id!r} has non-positive size {size}")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))

    def pose(self) -> RigidTransform:
        """Frame-from-box transform (box-local origin at center, x along heading)."""
        return RigidTransform.from_yaw(self.yaw, self.center)

    def to_local(self, points) -> np.ndarray:
        return RigidTransform(rot_z(-self.yaw)).apply(np.asarray(points, dtype=np.float64) - self.center)


def points_in_box(points, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    q = box.to_local(np.atleast_2d(points))
    half = box.size / 2 + margin
    return np.all(np.abs(q) <= half, axis=1)


def point_in_box(p, box: OrientedBox, margin: float = 0.0) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64).reshape(1, 3), box, margin)[0])


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Regular voxel grid; voxel (i, j, k) covers [origin + s*(i,j,k), origin + s*(i+1,j+1,k+1))."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"invalid grid dims {dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and bool(np.array_equal(self.origin, other.origin))
        )

    __hash__ = None

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def extent(self) -> np.ndarray:
        return self.voxel_size * np.asarray(self.dims, dtype=np.float64)

    def refined(self, factor: int) -> GridSpec:
        return GridSpec(self.origin, self.voxel_size / factor, tuple(d * factor for d in self.dims))

    def centers(self, ijk=None) -> np.ndarray:
        """Voxel centers for an (N, 3) index array, or for every voxel in row-major order."""
        if ijk is None:
            ijk = np.indices(self.dims).reshape(3, -1).T
        return self.origin + self.voxel_size * (np.asarray(ijk, dtype=np.float64) + 0.5)

    def voxel_of(self, points) -> np.ndarray:
        """Integer voxel indices (may fall outside the grid)."""
        rel = (np.asarray(points, dtype=np.float64) - self.origin) / self.voxel_size
        return np.floor(rel).astype(np.int64)

    def inside(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.all((ijk >= 0) & (ijk < np.asarray(self.dims)), axis=-1)

    def linear(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.ravel_multi_index((ijk[..., 0], ijk[..., 1], ijk[..., 2]), self.dims)


NUSCENES_GRID = GridSpec(origin=(-50.0, -50.0, -5.0), voxel_size=0.5, dims=(200, 200, 16))
SEMANTICKITTI_GRID = GridSpec(origin=(0.0, -25.6, -2.0), voxel_size=0.2, dims=(256, 256, 32))


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Dense uint16 labels with shape ``spec.dims``; 0 means free."""

    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.size != self.spec.n_voxels:
            raise ValueError(f"label count {lab.size} does not match grid {self.spec.dims}")
        object.__setattr__(self, "labels", lab.astype(np.uint16, copy=False).reshape(self.spec.dims))

    @classmethod
    def zeros(cls, spec: GridSpec) -> LabelGrid:
        return cls(spec, np.zeros(spec.dims, np.uint16))

    @property
    def occupied(self) -> np.ndarray:
        return self.labels != 0

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.labels != 0)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64))

    def __len__(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def area(self) -> float:
        t = self.triangles()
        return float(0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1).sum())

    def edges(self) -> np.ndarray:
        """Undirected edges as sorted (a, b) pairs, one row per face-edge incidence."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.sort(e, axis=1)

    def euler_characteristic(self) -> int:
        n_edges = len(np.unique(self.edges(), axis=0))
        n_verts = len(np.unique(self.faces))
        return n_verts - n_edges + len(self.faces)

    def is_closed(self) -> bool:
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(len(counts)) and bool(np.all(counts == 2))


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
