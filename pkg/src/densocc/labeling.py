"""Semantic transfer from the sparse labeled grid onto dense occupancy by
nearest-voxel search."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GridSpec, LabelGrid

_QUERY_CHUNK = 1 << 16


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelIndex:
    """k-d tree over the occupied voxels of a labeled grid, in integer index space.

    Squared distances between voxel centers are integer multiples of s^2, so
    ties are detected exactly and broken by the smaller linear voxel index.
    """

    spec: GridSpec
    ijk: np.ndarray
    labels: np.ndarray
    linear: np.ndarray
    tree: cKDTree

    def __len__(self) -> int:
        return len(self.linear)

    def nearest(self, query_ijk: np.ndarray) -> np.ndarray:
        """Row into the index of the nearest occupied voxel for each query."""
        q = np.asarray(query_ijk, dtype=np.int64).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0, np.int64)
        d, _ = self.tree.query(q.astype(np.float64), k=1)
        # Any other candidate at squared distance D+1 sits at least
        # 1/(2 sqrt(D+1)) further away, so this radius captures all exact ties
        # while excluding non-ties.
        radius = d + 0.25 / np.sqrt(d * d + 1.0)
        cands = self.tree.query_ball_point(q.astype(np.float64), radius)
        out = np.empty(len(q), np.int64)
        for n, (row, c) in enumerate(zip(q, cands)):
            if len(c) == 1:
                out[n] = c[0]
                continue
            c = np.asarray(c)
            d2 = ((self.ijk[c] - row) ** 2).sum(axis=1)
            tied = c[d2 == d2.min()]
            out[n] = tied[np.argmin(self.linear[tied])]
        return out


def build_voxel_index(v_s: LabelGrid) -> VoxelIndex:
    ijk = v_s.occupied_indices().astype(np.int64)
    if len(ijk) == 0:
        raise ValueError("cannot build a voxel index from an empty grid")
    labels = v_s.labels[tuple(ijk.T)]
    return VoxelIndex(v_s.spec, ijk, labels, v_s.spec.linear(ijk), cKDTree(ijk.astype(np.float64)))


def assign_labels(v_d: LabelGrid, index: VoxelIndex, threads: int = 1) -> LabelGrid:
    """Label each occupied voxel of ``v_d`` with its nearest labeled neighbour's class."""
    if v_d.spec != index.spec:
        raise GridMismatchError("dense and sparse grids have different specs")
    occ = v_d.occupied_indices()
    chunks = [occ[i:i + _QUERY_CHUNK] for i in range(0, len(occ), _QUERY_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(index.nearest, chunks))
    else:
        rows = [index.nearest(c) for c in chunks]
    out = np.zeros(v_d.spec.dims, np.uint16)
    if rows:
        out[tuple(occ.T)] = index.labels[np.concatenate(rows)]
    return LabelGrid(v_d.spec, out)
