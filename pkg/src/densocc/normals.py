from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

DEFAULT_K = 16


@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    cloud: PointCloud
    normals: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(n) != len(self.cloud):
            raise ValueError("normals length does not match cloud")
        if len(n) and np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) > 1e-6:
            raise ValueError("normals must be unit length")
        object.__setattr__(self, "normals", n)

    @property
    def positions(self) -> np.ndarray:
        return self.cloud.positions

    def __len__(self) -> int:
        return len(self.cloud)


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K, sensor_origins=None, *, point_origins=None,
                     workers: int = 1) -> OrientedPointCloud:
    """PCA normals from each point's k nearest neighbours, flipped to face the sensor.

    Give either ``sensor_origins`` (one row per frame, looked up through
    ``cloud.frame_index``) or ``point_origins`` (one row per point).
    """
    n = len(cloud)
    if n < 3:
        raise ValueError(f"normal estimation needs at least 3 points, got {n}")
    if point_origins is not None:
        origins = np.asarray(point_origins, dtype=np.float64).reshape(-1, 3)
        if len(origins) != n:
            raise ValueError("point_origins must have one row per point")
    elif sensor_origins is not None:
        if cloud.frame_index is None:
            raise ValueError("sensor_origins lookup needs a cloud with frame_index")
        origins = np.asarray(sensor_origins, dtype=np.float64).reshape(-1, 3)[cloud.frame_index]
    else:
        raise ValueError("sensor or point origins are required to orient normals")

    k = min(max(k, 3), n - 1)
    pts = cloud.positions
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k + 1, workers=workers)
    nb = pts[nbr]  # (n, k+1, 3), includes the point itself
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.einsum("ni,ni->n", normals, origins - pts) < 0
    normals[flip] *= -1
    return OrientedPointCloud(cloud, normals)
