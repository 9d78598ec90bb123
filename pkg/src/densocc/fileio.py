"""Scene bundle I/O: JSON manifest, binary point frames (.occp), voxel grids
(.occv) and PLY export.

All binary formats are little-endian with a 4-byte magic and a u32 version.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    CameraModel,
    GridSpec,
    LabelGrid,
    OrientedBox,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    orthonormality_error,
)

POINTS_MAGIC = b"OCCP"
GRID_MAGIC = b"OCCV"
FORMAT_VERSION = 1
POSE_TOL = 1e-6

FLAG_LABELS = 1
FLAG_INTENSITY = 2
FLAG_FRAME_INDEX = 4


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class VersionError(FormatError):
    pass


class SceneError(ValueError):
    """Invalid manifest contents; ``frame`` names the offending frame when known."""

    def __init__(self, message, frame=None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True, eq=False)
class FrameRecord:
    timestamp_us: int
    ego_pose: RigidTransform
    lidar_extrinsic: RigidTransform
    points_path: str
    cameras: list[CameraModel] = field(default_factory=list)
    boxes: list[OrientedBox] = field(default_factory=list)

    @property
    def sensor_pose(self) -> RigidTransform:
        """World-from-sensor."""
        return self.ego_pose @ self.lidar_extrinsic


@dataclass(eq=False)
class SceneManifest:
    scene_id: str
    frames: list[FrameRecord]
    class_names: list[str]
    root: Path = field(default_factory=Path)

    def points_file(self, ordinal: int) -> Path:
        return self.root / self.frames[ordinal].points_path

    def load_points(self, ordinal: int) -> PointCloud:
        return read_points(self.points_file(ordinal))

    def __len__(self) -> int:
        return len(self.frames)


def _pose_to_json(t: RigidTransform) -> list[float]:
    return [float(x) for x in t.matrix().reshape(-1)]


def _pose_from_json(values, what, frame) -> RigidTransform:
    m = np.asarray(values, dtype=np.float64)
    if m.shape != (16,):
        raise SceneError(f"{what} must have 16 entries, got {m.size}", frame)
    t = RigidTransform.from_matrix(m)
    if not np.all(np.isfinite(m)):
        raise SceneError(f"{what} has non-finite entries", frame)
    err = orthonormality_error(t.rotation)
    if err > POSE_TOL or np.linalg.det(t.rotation) <= 0:
        raise SceneError(
            f"{what} rotation is not a proper rotation (|R^T R - I| = {err:.3g}, det = {np.linalg.det(t.rotation):.3g})",
            frame,
        )
    return t


def camera_to_json(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "extrinsic": _pose_to_json(cam.extrinsic),
    }


def camera_from_json(d: dict, frame=None) -> CameraModel:
    return CameraModel(
        float(d["fx"]),
        float(d["fy"]),
        float(d["cx"]),
        float(d["cy"]),
        int(d["width"]),
        int(d["height"]),
        _pose_from_json(d["extrinsic"], "camera extrinsic", frame),
    )


def _box_to_json(b: OrientedBox) -> dict:
    return {
        "center": [float(x) for x in b.center],
        "size_lwh": [float(x) for x in b.size],
        "yaw": b.yaw,
        "instance_id": b.instance_id,
        "class_id": b.class_id,
    }


def manifest_to_json(m: SceneManifest) -> dict:
    return {
        "scene_id": m.scene_id,
        "class_names": list(m.class_names),
        "frames": [
            {
                "timestamp_us": int(f.timestamp_us),
                "ego_pose": _pose_to_json(f.ego_pose),
                "lidar_extrinsic": _pose_to_json(f.lidar_extrinsic),
                "cameras": [camera_to_json(c) for c in f.cameras],
                "boxes": [_box_to_json(b) for b in f.boxes],
                "points": f.points_path,
            }
            for f in m.frames
        ],
    }


def write_manifest(path, manifest: SceneManifest) -> None:
    Path(path).write_text(json.dumps(manifest_to_json(manifest), indent=1))


def parse_manifest(data: dict, root=Path(".")) -> SceneManifest:
    try:
        scene_id = str(data["scene_id"])
        class_names = [str(c) for c in data["class_names"]]
        raw_frames = data["frames"]
    except (KeyError, TypeError) as exc:
        raise SceneError(f"manifest missing key {exc}") from None
    frames = []
    prev_ts = None
    for i, fd in enumerate(raw_frames):
        try:
            ts = int(fd["timestamp_us"])
            if ts < 0:
                raise SceneError("negative timestamp", i)
            if prev_ts is not None and ts <= prev_ts:
                raise SceneError(f"timestamp {ts} not strictly increasing", i)
            prev_ts = ts
            boxes = []
            for bd in fd.get("boxes", []):
                cid = int(bd["class_id"])
                if not 0 <= cid < len(class_names):
                    raise SceneError(f"box {bd['instance_id']!r} class id {cid} out of range", i)
                boxes.append(OrientedBox(bd["center"], bd["size_lwh"], bd["yaw"], str(bd["instance_id"]), cid))
            frames.append(
                FrameRecord(
                    ts,
                    _pose_from_json(fd["ego_pose"], "ego_pose", i),
                    _pose_from_json(fd["lidar_extrinsic"], "lidar_extrinsic", i),
                    str(fd["points"]),
                    [camera_from_json(c, i) for c in fd.get("cameras", [])],
                    boxes,
                )
            )
        except KeyError as exc:
            raise SceneError(f"missing key {exc}", i) from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SceneError):
                raise
            raise SceneError(str(exc), i) from None
    return SceneManifest(scene_id, frames, class_names, Path(root))


def write_scene(out_dir, manifest: SceneManifest, clouds, name: str = "manifest.json") -> Path:
    """Write a manifest plus one points file per frame; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for frame, cloud in zip(manifest.frames, clouds):
        target = out / frame.points_path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_points(target, cloud)
    write_manifest(out / name, manifest)
    manifest.root = out
    return out / name


def load_scene(manifest_path, check_files: bool = True) -> SceneManifest:
    """Parse and validate a manifest; point frames are loaded lazily via ``load_points``."""
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"manifest parse error: {exc}") from None
    manifest = parse_manifest(data, path.parent)
    if check_files:
        for i in range(len(manifest)):
            f = manifest.points_file(i)
            if not f.is_file():
                raise FileNotFoundError(f"frame {i}: missing points file {f}")
    return manifest


# ---------------------------------------------------------------- point files


def _point_dtype(flags: int) -> np.dtype:
    fields = [("pos", "<f4", (3,))]
    if flags & FLAG_LABELS:
        fields.append(("label", "<u2"))
    if flags & FLAG_INTENSITY:
        fields.append(("intensity", "<f4"))
    if flags & FLAG_FRAME_INDEX:
        fields.append(("frame", "<u4"))
    return np.dtype(fields)  # packed: no alignment padding


def points_to_bytes(cloud: PointCloud) -> bytes:
    flags = (
        (FLAG_LABELS if cloud.labels is not None else 0)
        | (FLAG_INTENSITY if cloud.intensities is not None else 0)
        | (FLAG_FRAME_INDEX if cloud.frame_index is not None else 0)
    )
    rec = np.empty(len(cloud), dtype=_point_dtype(flags))
    rec["pos"] = cloud.positions
    if cloud.labels is not None:
        rec["label"] = cloud.labels
    if cloud.intensities is not None:
        rec["intensity"] = cloud.intensities
    if cloud.frame_index is not None:
        rec["frame"] = cloud.frame_index
    header = POINTS_MAGIC + struct.pack("<IBQ", FORMAT_VERSION, flags, len(cloud))
    return header + rec.tobytes()


def points_from_bytes(buf: bytes) -> PointCloud:
    if buf[:4] != POINTS_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {POINTS_MAGIC!r}")
    hsize = 4 + struct.calcsize("<IBQ")
    if len(buf) < hsize:
        raise TruncatedFileError("truncated point file header")
    version, flags, count = struct.unpack_from("<IBQ", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported point file version {version}")
    dtype = _point_dtype(flags)
    need = hsize + count * dtype.itemsize
    if len(buf) < need:
        raise TruncatedFileError(f"point payload truncated: {len(buf)} of {need} bytes")
    rec = np.frombuffer(buf, dtype=dtype, count=count, offset=hsize)
    return PointCloud(
        rec["pos"].astype(np.float64),
        rec["label"].copy() if flags & FLAG_LABELS else None,
        rec["intensity"].copy() if flags & FLAG_INTENSITY else None,
        rec["frame"].copy() if flags & FLAG_FRAME_INDEX else None,
    )


def write_points(path, cloud: PointCloud) -> None:
    """Positions are stored as float32; float64 inputs are rounded once."""
    Path(path).write_bytes(points_to_bytes(cloud))


def read_points(path) -> PointCloud:
    return points_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- grid files

_GRID_HEADER = struct.Struct("<I3dd3I")


def grid_to_bytes(grid: LabelGrid) -> bytes:
    s = grid.spec
    header = GRID_MAGIC + _GRID_HEADER.pack(FORMAT_VERSION, *s.origin, s.voxel_size, *s.dims)
    return header + np.ascontiguousarray(grid.labels, dtype="<u2").tobytes()


def grid_from_bytes(buf: bytes) -> LabelGrid:
    if buf[:4] != GRID_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {GRID_MAGIC!r}")
    hsize = 4 + _GRID_HEADER.size
    if len(buf) < hsize:
        raise TruncatedFileError("truncated grid header")
    version, ox, oy, oz, vs, h, w, z = _GRID_HEADER.unpack_from(buf, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported grid file version {version}")
    spec = GridSpec((ox, oy, oz), vs, (h, w, z))
    need = hsize + 2 * spec.n_voxels
    if len(buf) < need:
        raise TruncatedFileError(f"grid payload truncated: {len(buf)} of {need} bytes")
    labels = np.frombuffer(buf, dtype="<u2", count=spec.n_voxels, offset=hsize)
    return LabelGrid(spec, labels.astype(np.uint16))


GRID_HEADER_SIZE = 4 + _GRID_HEADER.size


def write_grid(path, grid: LabelGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def read_grid(path) -> LabelGrid:
    return grid_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- PLY

# 20 distinct colors; label 0 maps to grey.
PALETTE = np.array(
    [
        [128, 128, 128], [255, 120, 50], [255, 192, 203], [255, 255, 0], [0, 150, 245],
        [0, 255, 255], [200, 180, 0], [255, 0, 0], [255, 240, 150], [135, 60, 0],
        [160, 32, 240], [255, 0, 255], [139, 137, 137], [75, 0, 75], [150, 240, 80],
        [230, 230, 250], [0, 175, 0], [0, 0, 128], [128, 0, 0], [0, 128, 128],
    ],
    dtype=np.uint8,
)


def label_colors(labels) -> np.ndarray:
    return PALETTE[np.asarray(labels, dtype=np.int64) % len(PALETTE)]


def export_ply(obj, path, binary: bool = True, labels=None) -> None:
    """Write a TriangleMesh or PointCloud as PLY.

    Vertex coordinates are written as double so binary files round-trip exactly.
    Per-vertex labels (a cloud's own, or ``labels`` for a mesh) become colors.
    """
    if isinstance(obj, TriangleMesh):
        verts, faces = obj.vertices, obj.faces
    elif isinstance(obj, PointCloud):
        verts, faces = obj.positions, None
        if labels is None:
            labels = obj.labels
    else:
        raise TypeError(f"cannot export {type(obj).__name__} as PLY")
    colors = None if labels is None else label_colors(labels)

    lines = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0"]
    lines.append(f"element vertex {len(verts)}")
    lines += ["property double x", "property double y", "property double z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            vfields = [("xyz", "<f8", (3,))]
            if colors is not None:
                vfields.append(("rgb", "u1", (3,)))
            vrec = np.empty(len(verts), dtype=vfields)
            vrec["xyz"] = verts
            if colors is not None:
                vrec["rgb"] = colors
            fh.write(vrec.tobytes())
            if faces is not None:
                frec = np.empty(len(faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
                frec["n"] = 3
                frec["idx"] = faces
                fh.write(frec.tobytes())
        else:
            out = []
            for i, v in enumerate(verts):
                row = "%.17g %.17g %.17g" % tuple(v)
                if colors is not None:
                    row += " %d %d %d" % tuple(colors[i])
                out.append(row)
            if faces is not None:
                out += ["3 %d %d %d" % tuple(f) for f in faces]
            fh.write(("\n".join(out) + ("\n" if out else "")).encode("ascii"))


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2", "int": "i4", "uint": "u4",
    "float": "f4", "double": "f8", "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}


def read_ply_mesh(path) -> TriangleMesh:
    """Read vertices and triangular faces from PLY files in the layout ``export_ply`` writes."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len("end_header\n"):]
    fmt = None
    elements = []
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt}")

    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), np.int64)
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            if name == "vertex":
                width = len(props)
                arr = np.array(tokens[pos:pos + count * width], dtype=np.float64).reshape(count, width)
                pos += count * width
                names = [p[-1] for p in props]
                verts = arr[:, [names.index("x"), names.index("y"), names.index("z")]]
            elif name == "face":
                rows = []
                for _ in range(count):
                    n = int(tokens[pos])
                    if n != 3:
                        raise FormatError(f"{path}: only triangular faces supported")
                    rows.append([int(t) for t in tokens[pos + 1:pos + 4]])
                    pos += 4
                faces = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(verts, faces)

    offset = 0
    for name, count, props in elements:
        if name == "face":
            ltype, itype = _PLY_TYPES[props[0][1]], _PLY_TYPES[props[0][2]]
            dt = np.dtype([("n", "<" + ltype), ("idx", "<" + itype, (3,))])
            rec = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            if count and np.any(rec["n"] != 3):
                raise FormatError(f"{path}: only triangular faces supported")
            faces = rec["idx"].astype(np.int64)
        else:
            dt = np.dtype([(p[-1], "<" + _PLY_TYPES[p[0]]) for p in props])
            rec = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            if name == "vertex":
                verts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        offset += dt.itemsize * count
    return TriangleMesh(verts, faces)
