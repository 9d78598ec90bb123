"""``occ`` command line.

Exit codes: 0 ok, 2 invalid config, 3 invalid scene or input, 4 stage
failure, 5 grid-spec mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .fileio import FormatError, SceneError, read_grid, read_points, write_grid, write_scene
from .labeling import GridMismatchError
from .metrics import DEFAULT_TAU, evaluate_run
from .pipeline import StageError, frame_stem, run_densify, run_label, run_pipeline, run_stitch, run_voxelize
from .stitch import StitchError
from .synth import spec_from_json, synth_scene
from .voxelize import read_depth_dir, tsdf_fuse

EXIT_CONFIG = 2
EXIT_SCENE = 3
EXIT_STAGE = 4
EXIT_MISMATCH = 5

log = logging.getLogger("occ")


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _config(arg) -> PipelineConfig:
    if arg is None:
        return PipelineConfig()
    try:
        return load_config(arg)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _frames(arg: str):
    if arg == "all":
        return None
    try:
        return [int(x) for x in arg.split(",")]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--frame must be 'all' or ordinals, got {arg!r}") from None


def cmd_pipeline(args):
    cfg = _config(args.config)
    prov = run_pipeline(args.scene, _frames(args.frame), cfg, args.out)
    print(f"wrote {len(prov['frames'])} grid(s) to {args.out}")


def cmd_stitch(args):
    cfg = _config(args.config)
    info = run_stitch(args.scene, cfg, args.out)
    print(json.dumps(info))


def cmd_densify(args):
    cfg = _config(args.config)
    frames = _frames(args.frame)
    if frames is None:
        from .fileio import load_scene

        frames = list(range(len(load_scene(args.scene, check_files=False))))
    for f in frames:
        print(json.dumps(run_densify(args.stitched, args.scene, f, cfg, args.out)))


def cmd_voxelize(args):
    cfg = _config(args.config)
    print(json.dumps(run_voxelize(args.mesh, cfg, args.out)))


def cmd_label(args):
    cfg = _config(args.config)
    print(json.dumps(run_label(args.dense, args.points, cfg, args.out)))


def cmd_synth(args):
    try:
        spec = spec_from_json(json.loads(Path(args.spec).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid synthetic spec: {exc}") from None
    manifest, clouds = synth_scene(spec)
    path = write_scene(args.out, manifest, clouds)
    print(f"wrote {path} ({len(clouds)} frames, {sum(len(c) for c in clouds)} points)")


def cmd_tsdf(args):
    cfg = _config(args.config)
    maps = read_depth_dir(args.depths)
    if not maps:
        raise CliError(EXIT_SCENE, f"no depth maps (*.json sidecars) in {args.depths}")
    grid = tsdf_fuse(maps, cfg.grid, args.truncation)
    write_grid(args.out, grid)
    print(f"fused {len(maps)} depth map(s) into {args.out}")


def _load_pred(path):
    p = Path(path)
    head = p.read_bytes()[:4]
    if head == b"OCCP":
        return read_points(p)
    return read_grid(p)


def cmd_eval(args):
    try:
        pred = _load_pred(args.pred)
        gt = read_grid(args.gt)
    except (OSError, FormatError) as exc:
        raise CliError(EXIT_SCENE, str(exc)) from None
    report = evaluate_run(pred, gt, args.tau)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occ", description="Dense occupancy ground truth from multi-frame LiDAR.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="stitch, densify, voxelize and label")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", default="all", help="frame ordinal(s), comma separated, or 'all'")
    p.add_argument("--config", help="config JSON or preset name (nuscenes, semantickitti)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("stitch", help="aggregate static and object streams")
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("densify", help="compose a frame and reconstruct its Poisson mesh")
    p.add_argument("--scene", required=True)
    p.add_argument("--stitched", required=True)
    p.add_argument("--frame", default="all")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("voxelize", help="surface occupancy of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("label", help="nearest-neighbour semantic transfer")
    p.add_argument("--dense", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("synth", help="simulate a LiDAR scene from analytic primitives")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tsdf", help="fuse same-timestamp depth maps into a grid")
    p.add_argument("--depths", required=True)
    p.add_argument("--config")
    p.add_argument("--truncation", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tsdf)

    p = sub.add_parser("eval", help="score a prediction against dense ground truth")
    p.add_argument("--pred", required=True, help=".occv grid or .occp point cloud")
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"occ: {exc}", file=sys.stderr)
        return exc.code
    except GridMismatchError as exc:
        print(f"occ: grid mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FileNotFoundError, SceneError, StitchError, FormatError) as exc:
        print(f"occ: invalid scene or input: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except StageError as exc:
        print(f"occ: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValueError as exc:
        print(f"occ: stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
