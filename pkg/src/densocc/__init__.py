"""Dense semantic occupancy ground truth from multi-frame LiDAR, and its evaluation."""

__version__ = "0.1.0"

from .geometry import (
    NUSCENES_GRID,
    SEMANTICKITTI_GRID,
    CameraModel,
    GridSpec,
    LabelGrid,
    OrientedBox,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    compose,
    invert,
    point_in_box,
)
from .labeling import assign_labels, build_voxel_index
from .meshing import marching_cubes
from .metrics import evaluate_run, occupancy_scores, recon_metrics
from .normals import estimate_normals
from .poisson import poisson_reconstruct, solve_poisson_grid
from .stitch import aggregate_scene, compose_frame, segment_frame
from .voxelize import occupancy_to_points, tsdf_fuse, voxelize_mesh, voxelize_points
