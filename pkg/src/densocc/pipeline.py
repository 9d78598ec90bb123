"""Dense occupancy ground-truth generation, stage by stage.

Each stage reads the previous stage's files and writes its own, so a run can
be resumed per stage; ``run_pipeline`` chains the same functions.

    stitch   manifest            -> stitch/ (static.occp, objects/*.occp, stitch.json)
    densify  stitch/ + frame     -> frame_NNNN.points.occp, frame_NNNN.mesh.ply
    voxelize mesh.ply            -> frame_NNNN.dense.occv  (binary surface occupancy)
    label    dense + points      -> frame_NNNN.occv        (semantic occupancy)
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .fileio import export_ply, load_scene, read_grid, read_ply_mesh, read_points, write_grid, write_points
from .geometry import PointCloud
from .labeling import assign_labels, build_voxel_index
from .normals import estimate_normals
from .poisson import poisson_reconstruct
from .stitch import aggregate_scene, compose_frame, load_aggregated, save_aggregated
from .voxelize import voxelize_mesh, voxelize_points

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"{stage} stage failed: {message}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def frame_stem(frame: int) -> str:
    return f"frame_{frame:04d}"


def run_stitch(manifest_path, cfg: PipelineConfig, out_dir) -> dict:
    manifest = load_scene(manifest_path)
    agg = aggregate_scene(manifest, margin=cfg.box_margin, threads=cfg.resolved_threads(),
                          self_radius=cfg.self_radius)
    save_aggregated(agg, out_dir)
    return {
        "static_points": len(agg.static_world),
        "object_points": {iid: len(t.canonical_points) for iid, t in agg.objects.items()},
        "frames": len(manifest),
    }


def _pad_crop(cloud: PointCloud, cfg: PipelineConfig, pad_voxels: float = 2.0) -> np.ndarray:
    g = cfg.grid
    lo = g.origin - pad_voxels * g.voxel_size
    hi = g.origin + g.extent + pad_voxels * g.voxel_size
    return np.all((cloud.positions >= lo) & (cloud.positions < hi), axis=1)


def run_densify(stitch_dir, manifest_path, frame: int, cfg: PipelineConfig, out_dir) -> dict:
    """Compose the merged cloud for one frame and reconstruct its Poisson mesh."""
    manifest = load_scene(manifest_path, check_files=False)
    if not 0 <= frame < len(manifest):
        raise StageError("densify", f"frame {frame} out of range (scene has {len(manifest)})")
    agg = load_aggregated(stitch_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = frame_stem(frame)

    merged, origins = compose_frame(agg, manifest.frames[frame], return_origins=True)
    keep = _pad_crop(merged, cfg)
    merged, origins = merged.subset(keep), origins[keep]
    write_points(out / f"{stem}.points.occp", merged)
    if len(merged) < 10:
        raise StageError("densify", f"only {len(merged)} points near the grid for frame {frame}")

    threads = cfg.resolved_threads()
    oriented = estimate_normals(merged, cfg.normal_k, point_origins=origins, workers=threads)
    try:
        rec = poisson_reconstruct(oriented, cfg.grid.refined(cfg.poisson_refinement), cfg.solver, full=True)
    except ValueError as exc:
        raise StageError("densify", str(exc)) from exc
    export_ply(rec.mesh, out / f"{stem}.mesh.ply", binary=True)
    return {
        "composed_points": len(merged),
        "dropped_points": rec.dropped,
        "cg_iterations": rec.solve.iterations,
        "cg_relative_residual": rec.solve.relative_residual,
        "cg_converged": rec.solve.converged,
        "mesh_vertices": len(rec.mesh.vertices),
        "mesh_faces": len(rec.mesh.faces),
    }


def run_voxelize(mesh_path, cfg: PipelineConfig, out_path) -> dict:
    mesh = read_ply_mesh(mesh_path)
    grid = voxelize_mesh(mesh, cfg.grid, cfg.voxelization, threads=cfg.resolved_threads())
    write_grid(out_path, grid)
    return {"dense_voxels": int(np.count_nonzero(grid.labels))}


def run_label(dense_path, points_path, cfg: PipelineConfig, out_path) -> dict:
    dense = read_grid(dense_path)
    if dense.spec != cfg.grid:
        raise StageError("label", "dense grid does not match the configured grid")
    if not cfg.nn_labeling:
        write_grid(out_path, dense)
        return {"labeled_voxels": 0}
    pts = read_points(points_path)
    if pts.labels is None:
        raise StageError("label", "merged points carry no semantic labels")
    labeled = pts.subset(pts.labels != 0)
    if len(labeled) < len(pts):
        log.info("ignoring %d unlabeled points", len(pts) - len(labeled))
    sparse = voxelize_points(labeled, cfg.grid)
    if not sparse.occupied.any():
        raise StageError("label", "no labeled points inside the grid")
    final = assign_labels(dense, build_voxel_index(sparse), threads=cfg.resolved_threads())
    write_grid(out_path, final)
    return {"sparse_voxels": int(np.count_nonzero(sparse.labels)), "labeled_voxels": int(np.count_nonzero(final.labels))}


def run_pipeline(manifest_path, frames, cfg: PipelineConfig, out_dir) -> dict:
    """Full ground-truth generation for the given frame ordinals (None = every frame).

    Writes ``frame_NNNN.occv`` per frame (plus ``frame_NNNN.mesh.ply`` when
    ``cfg.export_mesh``), intermediates under ``work/`` and ``stitch/``, and
    ``provenance.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_scene(manifest_path)
    if frames is None:
        frames = list(range(len(manifest)))
    for f in frames:
        if not 0 <= f < len(manifest):
            raise StageError("pipeline", f"frame {f} out of range (scene has {len(manifest)})")

    timings = {}
    t0 = time.perf_counter()
    stitch_info = run_stitch(manifest_path, cfg, out / "stitch")
    timings["stitch"] = time.perf_counter() - t0

    work = out / "work"
    per_frame = {}
    for f in frames:
        stem = frame_stem(f)
        info = {}
        t = time.perf_counter()
        info.update(run_densify(out / "stitch", manifest_path, f, cfg, work))
        t1 = time.perf_counter()
        info.update(run_voxelize(work / f"{stem}.mesh.ply", cfg, work / f"{stem}.dense.occv"))
        t2 = time.perf_counter()
        info.update(run_label(work / f"{stem}.dense.occv", work / f"{stem}.points.occp", cfg, out / f"{stem}.occv"))
        t3 = time.perf_counter()
        if cfg.export_mesh:
            (out / f"{stem}.mesh.ply").write_bytes((work / f"{stem}.mesh.ply").read_bytes())
        info["timings"] = {"densify": t1 - t, "voxelize": t2 - t1, "label": t3 - t2}
        info["output_sha256"] = sha256_file(out / f"{stem}.occv")
        per_frame[stem] = info

    provenance = {
        "config": cfg.to_json(),
        "config_sha256": cfg.digest(),
        "manifest_sha256": sha256_file(manifest_path),
        "points_sha256": {fr.points_path: sha256_file(manifest.points_file(i)) for i, fr in enumerate(manifest.frames)},
        "stitch": stitch_info,
        "frames": per_frame,
        "timings": {"stitch": timings["stitch"], "total": time.perf_counter() - t0},
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1))
    return provenance
