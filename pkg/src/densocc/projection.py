"""Deterministic geometry of camera-to-volume feature lifting: projecting
voxel centers into views, finding hit views, bilinear feature sampling, and
the average-over-hit-views fusion baseline."""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import BadMagicError, TruncatedFileError, VersionError
from .geometry import CameraModel, GridSpec, RigidTransform, invert

FEATURE_MAGIC = b"OCCM"
_LIFT_BLOCK = 8192


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-camera features of shape (height, width, channels); ``stride`` maps image px to feature px."""

    values: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError("feature values must be (height, width, channels)")
        if not self.stride > 0:
            raise ValueError("stride must be positive")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class VolumeFeatures:
    spec: GridSpec
    values: np.ndarray  # dims + (C,)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]


def project_points(points_world, cam: CameraModel, ego_pose: RigidTransform):
    """Vectorised projection; returns (u, v, depth, valid) arrays."""
    p = (cam.extrinsic @ invert(ego_pose)).apply(np.atleast_2d(points_world))
    z = p[:, 2]
    zs = np.where(z > 0, z, 1.0)
    u = cam.fx * p[:, 0] / zs + cam.cx
    v = cam.fy * p[:, 1] / zs + cam.cy
    valid = (z > 0) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return u, v, z, valid


def project_to_view(p_world, cam: CameraModel, ego_pose: RigidTransform):
    """(u, v, depth) in image pixels, or None when the point is behind the camera or off-image."""
    u, v, z, valid = project_points(np.asarray(p_world, float).reshape(1, 3), cam, ego_pose)
    if not valid[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def hit_views(p_world, cameras: list[CameraModel], ego_pose: RigidTransform) -> set[int]:
    return {i for i, cam in enumerate(cameras) if project_to_view(p_world, cam, ego_pose) is not None}


def bilinear_sample_many(fm: FeatureMap, u, v) -> np.ndarray:
    """Bilinear samples at image coordinates (u, v); feature coordinates are clamped to the map."""
    x = np.clip(np.asarray(u, float) / fm.stride, 0, fm.width - 1)
    y = np.clip(np.asarray(v, float) / fm.stride, 0, fm.height - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(fm.width - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(fm.height - 2, 0))
    x1 = np.minimum(x0 + 1, fm.width - 1)
    y1 = np.minimum(y0 + 1, fm.height - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    f = fm.values
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_sample(fm: FeatureMap, u: float, v: float) -> np.ndarray:
    return bilinear_sample_many(fm, np.array([u]), np.array([v]))[0]


def average_lift(spec: GridSpec, feature_maps: list[FeatureMap], cameras: list[CameraModel],
                 ego_pose: RigidTransform, threads: int = 1) -> VolumeFeatures:
    """Mean of bilinear samples over each voxel center's hit views (zero when none hit)."""
    if len(feature_maps) != len(cameras):
        raise ValueError("need one feature map per camera")
    if not feature_maps:
        raise ValueError("need at least one camera")
    chans = {fm.channels for fm in feature_maps}
    if len(chans) != 1:
        raise ValueError(f"feature maps disagree on channel count: {sorted(chans)}")
    c = chans.pop()
    centers = spec.centers()

    def work(rows):
        pts = centers[rows]
        acc = np.zeros((len(pts), c))
        hits = np.zeros(len(pts))
        # cameras in index order: a fixed summation order
        for fm, cam in zip(feature_maps, cameras):
            u, v, _, valid = project_points(pts, cam, ego_pose)
            if valid.any():
                acc[valid] += bilinear_sample_many(fm, u[valid], v[valid])
                hits[valid] += 1
        nz = hits > 0
        acc[nz] /= hits[nz, None]
        return acc

    # fixed block size so results do not depend on the thread count
    blocks = [np.arange(i, min(i + _LIFT_BLOCK, len(centers))) for i in range(0, len(centers), _LIFT_BLOCK)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return VolumeFeatures(spec, np.concatenate(parts).reshape(spec.dims + (c,)))


_FM_HEADER = struct.Struct("<IIIIf")


def write_feature_map(path, fm: FeatureMap) -> None:
    header = FEATURE_MAGIC + _FM_HEADER.pack(1, fm.width, fm.height, fm.channels, fm.stride)
    Path(path).write_bytes(header + np.ascontiguousarray(fm.values, dtype="<f4").tobytes())


def read_feature_map(path) -> FeatureMap:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(buf) < 4 + _FM_HEADER.size:
        raise TruncatedFileError("truncated feature map header")
    version, w, h, c, stride = _FM_HEADER.unpack_from(buf, 4)
    if version != 1:
        raise VersionError(f"unsupported feature map version {version}")
    off = 4 + _FM_HEADER.size
    if len(buf) < off + 4 * w * h * c:
        raise TruncatedFileError("feature map payload truncated")
    vals = np.frombuffer(buf, "<f4", w * h * c, off).astype(np.float64).reshape(h, w, c)
    return FeatureMap(vals, float(stride))
