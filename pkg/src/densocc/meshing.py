"""Iso-surface extraction over cell-centered scalar fields."""
from __future__ import annotations

import numpy as np
from skimage import measure

from .geometry import TriangleMesh


def marching_cubes(field, iso: float) -> TriangleMesh:
    """Triangulate the level set ``field == iso``.

    ``field`` is a ScalarField; samples sit at voxel centers. Triangles are
    wound so their right-hand normals point toward decreasing field values.
    Returns an empty mesh when the level is not crossed.
    """
    values = field.values
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")
    if min(values.shape) < 2 or not (values.min() < iso < values.max()):
        return TriangleMesh.empty()
    h = field.spec.voxel_size
    verts, faces, _, _ = measure.marching_cubes(
        values, level=iso, spacing=(h, h, h), gradient_direction="descent", method="lewiner"
    )
    # skimage winds faces so normals point toward increasing values under "descent";
    # reverse to point toward decreasing values.
    faces = faces[:, ::-1]
    verts = verts.astype(np.float64) + field.spec.origin + 0.5 * h
    return TriangleMesh(verts, faces)
