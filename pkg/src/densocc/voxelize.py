"""Conversions into and out of LabelGrids: meshes, labeled points, fused depth maps."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import camera_from_json, camera_to_json
from .geometry import CameraModel, GridSpec, LabelGrid, PointCloud, RigidTransform, TriangleMesh, invert

SAT_EPS = 1e-9
_PAIR_CHUNK = 1 << 18


def _tri_box_overlap(v0, v1, v2, eps=SAT_EPS):
    """Separating-axis test of triangles (already centred on their box) against
    the cube [-0.5, 0.5]^3. All inputs are (P, 3); returns a (P,) bool mask.
    Touching counts as overlap."""
    h = 0.5 + eps
    ok = np.ones(len(v0), bool)
    # box face normals
    for ax in range(3):
        a, b, c = v0[:, ax], v1[:, ax], v2[:, ax]
        ok &= ~((np.minimum(np.minimum(a, b), c) > h) | (np.maximum(np.maximum(a, b), c) < -h))
    e = (v1 - v0, v2 - v1, v0 - v2)
    # triangle normal
    n = np.cross(e[0], e[1])
    d = np.einsum("pi,pi->p", n, v0)
    ok &= np.abs(d) <= h * np.abs(n).sum(axis=1)
    # edge cross products with box axes
    verts = (v0, v1, v2)
    for edge in e:
        for ax in range(3):
            axis = np.zeros_like(edge)
            # unit(ax) x edge
            j, k = (ax + 1) % 3, (ax + 2) % 3
            axis[:, j] = -edge[:, k]
            axis[:, k] = edge[:, j]
            p = [np.einsum("pi,pi->p", axis, v) for v in verts]
            r = h * np.abs(axis).sum(axis=1)
            ok &= ~((np.minimum(np.minimum(p[0], p[1]), p[2]) > r) | (np.maximum(np.maximum(p[0], p[1]), p[2]) < -r))
    return ok


def _mesh_candidates(tri: np.ndarray, dims):
    """Expand each triangle into the voxels of its clipped bounding box,
    including voxels that only touch it on a face."""
    lo = np.floor(tri.min(axis=1) - SAT_EPS).astype(np.int64)
    hi = np.floor(tri.max(axis=1) + SAT_EPS).astype(np.int64)
    dmax = np.asarray(dims) - 1
    keep = np.all(hi >= 0, axis=1) & np.all(lo <= dmax, axis=1)
    lo = np.clip(lo, 0, dmax)
    hi = np.clip(hi, 0, dmax)
    ext = np.where(keep[:, None], hi - lo + 1, 0)
    counts = ext.prod(axis=1)
    tri_id = np.repeat(np.arange(len(tri)), counts)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(counts.sum()) - np.repeat(start, counts)
    e = ext[tri_id]
    i = local // (e[:, 1] * e[:, 2])
    j = (local // e[:, 2]) % e[:, 1]
    k = local % e[:, 2]
    ijk = lo[tri_id] + np.stack([i, j, k], axis=1)
    return tri_id, ijk


def voxelize_mesh(mesh: TriangleMesh, spec: GridSpec, mode: str = "conservative", threads: int = 1) -> LabelGrid:
    """Binary surface occupancy (label 1) of a mesh.

    ``conservative`` marks every voxel a triangle touches (separating-axis test);
    ``vertices`` marks only voxels containing a vertex referenced by a face.
    """
    out = np.zeros(spec.n_voxels, bool)
    if len(mesh.faces) == 0:
        return LabelGrid(spec, out.reshape(spec.dims))
    if not np.all(np.isfinite(mesh.vertices)):
        raise ValueError("mesh vertices must be finite")
    local = (mesh.vertices - spec.origin) / spec.voxel_size
    if mode == "vertices":
        ijk = np.floor(local[np.unique(mesh.faces)]).astype(np.int64)
        ijk = ijk[spec.inside(ijk)]
        out[spec.linear(ijk)] = True
        return LabelGrid(spec, out.reshape(spec.dims))
    if mode != "conservative":
        raise ValueError(f"unknown voxelization mode {mode!r}")

    tri = local[mesh.faces]
    # bound each chunk by pair count, not triangle count
    ext = np.floor(tri.max(axis=1) + SAT_EPS) - np.floor(tri.min(axis=1) - SAT_EPS) + 1
    cost = np.cumsum(np.prod(np.clip(ext, 1, None), axis=1))
    cuts = np.searchsorted(cost, np.arange(_PAIR_CHUNK, cost[-1], _PAIR_CHUNK))
    bounds = list(zip(np.concatenate([[0], cuts]), np.concatenate([cuts, [len(tri)]])))

    def work(b):
        t = tri[b[0]:b[1]]
        tri_id, ijk = _mesh_candidates(t, spec.dims)
        c = ijk + 0.5
        hit = _tri_box_overlap(t[tri_id, 0] - c, t[tri_id, 1] - c, t[tri_id, 2] - c)
        return spec.linear(ijk[hit])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    for lin in parts:
        out[lin] = True
    return LabelGrid(spec, out.reshape(spec.dims))


def voxelize_points(cloud: PointCloud, spec: GridSpec) -> LabelGrid:
    """Majority label per voxel (ties to the smallest class id); points outside the grid are ignored."""
    if cloud.labels is None:
        raise ValueError("voxelize_points needs a labeled cloud")
    unlabeled = int(np.count_nonzero(cloud.labels == 0))
    if unlabeled:
        raise ValueError(f"{unlabeled} points carry label 0 (unlabeled)")
    out = np.zeros(spec.n_voxels, np.uint16)
    ijk = spec.voxel_of(cloud.positions)
    inside = spec.inside(ijk)
    if not inside.any():
        return LabelGrid(spec, out.reshape(spec.dims))
    lin = spec.linear(ijk[inside]).astype(np.int64)
    lab = cloud.labels[inside].astype(np.int64)
    keys, counts = np.unique(lin * 65536 + lab, return_counts=True)
    vox, labs = keys // 65536, keys % 65536
    order = np.lexsort((labs, -counts, vox))
    vox, labs = vox[order], labs[order]
    first = np.concatenate([[True], vox[1:] != vox[:-1]])
    out[vox[first]] = labs[first]
    return LabelGrid(spec, out.reshape(spec.dims))


def occupancy_to_points(grid: LabelGrid) -> PointCloud:
    ijk = grid.occupied_indices()
    return PointCloud(grid.spec.centers(ijk), labels=grid.labels[tuple(ijk.T)])


# ---------------------------------------------------------------- depth fusion


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Z-depth image in metres; non-positive entries are invalid."""

    width: int
    height: int
    depths: np.ndarray
    camera: CameraModel
    ego_pose: RigidTransform

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.size != self.width * self.height:
            raise ValueError(f"depth array has {d.size} entries for a {self.width}x{self.height} image")
        object.__setattr__(self, "depths", d.reshape(self.height, self.width))

    def sort_key(self) -> bytes:
        return self.ego_pose.matrix().tobytes() + self.camera.extrinsic.matrix().tobytes() + self.depths.tobytes()


def tsdf_fuse(depth_maps: list[DepthMap], spec: GridSpec, truncation: float | None = None) -> LabelGrid:
    """Fuse same-timestamp depth maps into a binary surface grid (world coordinates).

    Per view the projective SDF (depth - z) is clamped to +-truncation; views
    where a voxel lies more than ``truncation`` behind the observed surface are
    skipped. Voxels whose averaged value satisfies |tsdf| < voxel_size are occupied.
    """
    if not depth_maps:
        raise ValueError("tsdf_fuse needs at least one depth map")
    tau = 2 * spec.voxel_size if truncation is None else float(truncation)
    centers = spec.centers()
    total = np.zeros(len(centers))
    weight = np.zeros(len(centers))
    # canonical order makes the float sums independent of input order
    for dm in sorted(depth_maps, key=DepthMap.sort_key):
        cam = dm.camera
        p = (cam.extrinsic @ invert(dm.ego_pose)).apply(centers)
        z = p[:, 2]
        front = z > 0
        zs = np.where(front, z, 1.0)
        u = cam.fx * p[:, 0] / zs + cam.cx
        v = cam.fy * p[:, 1] / zs + cam.cy
        col = np.floor(u).astype(np.int64)
        row = np.floor(v).astype(np.int64)
        ok = front & (col >= 0) & (col < dm.width) & (row >= 0) & (row < dm.height)
        d = np.zeros(len(centers))
        d[ok] = dm.depths[row[ok], col[ok]]
        ok &= d > 0
        sdf = d - z
        ok &= sdf >= -tau
        total[ok] += np.clip(sdf[ok], -tau, tau)
        weight[ok] += 1
    occ = weight > 0
    occ[occ] = np.abs(total[occ] / weight[occ]) < spec.voxel_size
    return LabelGrid(spec, occ.reshape(spec.dims).astype(np.uint16))


def write_depth_map(path_stem, dm: DepthMap) -> None:
    """Write ``<stem>.f32`` (raw little-endian row-major) and ``<stem>.json`` sidecar."""
    stem = Path(path_stem)
    raw = stem.with_name(stem.name + ".f32")
    raw.write_bytes(np.ascontiguousarray(dm.depths, dtype="<f4").tobytes())
    side = {
        "width": dm.width,
        "height": dm.height,
        "camera": camera_to_json(dm.camera),
        "ego_pose": [float(x) for x in dm.ego_pose.matrix().reshape(-1)],
        "depth": raw.name,
    }
    stem.with_name(stem.name + ".json").write_text(json.dumps(side, indent=1))


def read_depth_map(sidecar) -> DepthMap:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    raw = sidecar.parent / meta.get("depth", sidecar.stem + ".f32")
    w, h = int(meta["width"]), int(meta["height"])
    buf = raw.read_bytes()
    if len(buf) != 4 * w * h:
        raise ValueError(f"{raw}: expected {4 * w * h} bytes, found {len(buf)}")
    depths = np.frombuffer(buf, "<f4").astype(np.float64)
    return DepthMap(w, h, depths, camera_from_json(meta["camera"]), RigidTransform.from_matrix(meta["ego_pose"]))


def read_depth_dir(directory) -> list[DepthMap]:
    return [read_depth_map(p) for p in sorted(Path(directory).glob("*.json"))]
