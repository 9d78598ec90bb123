from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import NUSCENES_GRID, SEMANTICKITTI_GRID, GridSpec
from .poisson import SolverParams

GRID_PRESETS = {"nuscenes": NUSCENES_GRID, "semantickitti": SEMANTICKITTI_GRID}
VOXELIZATION_MODES = ("conservative", "vertices")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec = NUSCENES_GRID
    box_margin: float = 0.1
    normal_k: int = 16
    poisson_refinement: int = 2
    solver: SolverParams = field(default_factory=SolverParams)
    voxelization: str = "conservative"
    nn_labeling: bool = True
    threads: int = 0
    seed: int = 0
    self_radius: float | None = None
    export_mesh: bool = True

    def resolved_threads(self) -> int:
        env = os.environ.get("OCC_THREADS")
        n = int(env) if env else self.threads
        return n if n > 0 else (os.cpu_count() or 1)

    def to_json(self) -> dict:
        g = self.grid
        return {
            "grid": {"origin": [float(x) for x in g.origin], "voxel_size": g.voxel_size, "dims": list(g.dims)},
            "box_margin": self.box_margin,
            "normal_k": self.normal_k,
            "poisson_refinement": self.poisson_refinement,
            "solver": {"tolerance": self.solver.tolerance, "max_iterations": self.solver.max_iterations},
            "voxelization": self.voxelization,
            "nn_labeling": self.nn_labeling,
            "threads": self.threads,
            "seed": self.seed,
            "self_radius": self.self_radius,
            "export_mesh": self.export_mesh,
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON form; thread count is excluded since it cannot change outputs."""
        d = self.to_json()
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _grid_from_json(g) -> GridSpec:
    if isinstance(g, str):
        if g not in GRID_PRESETS:
            raise ConfigError(f"unknown grid preset {g!r}; choose from {sorted(GRID_PRESETS)}")
        return GRID_PRESETS[g]
    if "preset" in g:
        return _grid_from_json(g["preset"])
    return GridSpec(tuple(float(x) for x in g["origin"]), float(g["voxel_size"]), tuple(int(x) for x in g["dims"]))


def config_from_json(d: dict) -> PipelineConfig:
    known = set(PipelineConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        kw = {}
        if "grid" in d:
            kw["grid"] = _grid_from_json(d["grid"])
        if "solver" in d:
            kw["solver"] = SolverParams(float(d["solver"].get("tolerance", 1e-6)),
                                        int(d["solver"].get("max_iterations", 2000)))
        for key, cast in (("box_margin", float), ("normal_k", int), ("poisson_refinement", int),
                          ("voxelization", str), ("nn_labeling", bool), ("threads", int), ("seed", int),
                          ("export_mesh", bool)):
            if key in d:
                kw[key] = cast(d[key])
        if d.get("self_radius") is not None:
            kw["self_radius"] = float(d["self_radius"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    cfg = PipelineConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    if not cfg.box_margin >= 0:
        raise ConfigError("box_margin must be >= 0")
    if cfg.normal_k < 3:
        raise ConfigError("normal_k must be >= 3")
    if cfg.poisson_refinement < 1:
        raise ConfigError("poisson_refinement must be >= 1")
    if cfg.voxelization not in VOXELIZATION_MODES:
        raise ConfigError(f"voxelization must be one of {VOXELIZATION_MODES}")
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0")
    if cfg.self_radius is not None and not cfg.self_radius > 0:
        raise ConfigError("self_radius must be positive when set")


def load_config(path_or_preset) -> PipelineConfig:
    """Read a JSON config file, or build the default config for a named grid preset."""
    if str(path_or_preset) in GRID_PRESETS:
        return replace(PipelineConfig(), grid=GRID_PRESETS[str(path_or_preset)])
    p = Path(path_or_preset)
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_json(data)


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=1))
