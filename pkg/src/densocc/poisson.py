"""Poisson surface reconstruction on a regular grid.

Oriented samples are splatted into a cell-centered vector field, its
divergence drives a Neumann Poisson problem solved by conjugate gradients,
and the indicator-like solution is triangulated at the mean sample value.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .fileio import BadMagicError, TruncatedFileError, VersionError
from .geometry import GridSpec, TriangleMesh
from .meshing import marching_cubes
from .normals import OrientedPointCloud

log = logging.getLogger(__name__)

FIELD_MAGIC = b"OCCF"


class ConvergenceWarning(RuntimeWarning):
    pass


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.spec.n_voxels:
            raise ValueError(f"field has {v.size} values for grid {self.spec.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v.reshape(self.spec.dims))


@dataclass(frozen=True)
class SolverParams:
    tolerance: float = 1e-6
    max_iterations: int = 2000

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


class PoissonSolution(NamedTuple):
    field: ScalarField
    converged: bool
    iterations: int
    relative_residual: float


def laplacian(x: np.ndarray, h: float = 1.0) -> np.ndarray:
    """7-point Laplacian with zero-flux boundaries (missing neighbours contribute nothing)."""
    out = np.zeros_like(x)
    for ax in range(3):
        n = x.shape[ax]
        if n < 2:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(0, n - 1)
        hi[ax] = slice(1, n)
        diff = x[tuple(hi)] - x[tuple(lo)]
        out[tuple(lo)] += diff
        out[tuple(hi)] -= diff
    return out / (h * h)


def solve_poisson_grid(divergence: ScalarField, params: SolverParams = SolverParams()) -> PoissonSolution:
    """Solve lap(x) = divergence by CG on the zero-mean subspace.

    Both the right-hand side and the iterate are kept mean-free, which removes
    the constant null space of the Neumann operator.
    """
    h = divergence.spec.voxel_size
    b = divergence.values - divergence.values.mean()
    # Work with the positive semi-definite operator A = -lap.
    rhs = -b
    x = np.zeros_like(rhs)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return PoissonSolution(ScalarField(divergence.spec, x), True, 0, 0.0)

    r = rhs.copy()
    p = r.copy()
    rr = float(np.vdot(r, r))
    it = 0
    rel = np.sqrt(rr) / bnorm
    while rel > params.tolerance and it < params.max_iterations:
        ap = -laplacian(p, h)
        alpha = rr / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        r -= r.mean()
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        rel = np.sqrt(rr) / bnorm

    x -= x.mean()
    # report the true residual rather than the recursively updated one
    true_rel = float(np.linalg.norm(laplacian(x, h) - b) / bnorm)
    converged = true_rel <= params.tolerance
    if not converged:
        warnings.warn(
            f"CG stopped after {it} iterations with relative residual {true_rel:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return PoissonSolution(ScalarField(divergence.spec, x), converged, it, true_rel)


def _trilinear_stencil(spec: GridSpec, points: np.ndarray):
    """Corner indices (n, 8, 3) and weights (n, 8) on the cell-center lattice."""
    g = (points - spec.origin) / spec.voxel_size - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base
    offs = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    idx = base[:, None, :] + offs[None]
    w = np.prod(np.where(offs[None] == 1, frac[:, None, :], 1 - frac[:, None, :]), axis=2)
    return idx, w


def splat_normals(oriented: OrientedPointCloud, spec: GridSpec, inward: bool = True) -> np.ndarray:
    """Trilinear splat of unit normals, normalised by the total weight per cell.

    Returns an array of shape dims + (3,). Cells no sample touches stay zero.
    """
    idx, w = _trilinear_stencil(spec, oriented.positions)
    valid = spec.inside(idx)
    lin = spec.linear(np.where(valid[..., None], idx, 0))[valid]
    wv = w[valid]
    normals = -oriented.normals if inward else oriented.normals
    nrm = np.repeat(normals[:, None, :], 8, axis=1)[valid]
    n = spec.n_voxels
    wsum = np.bincount(lin, weights=wv, minlength=n)
    field = np.stack([np.bincount(lin, weights=wv * nrm[:, c], minlength=n) for c in range(3)], axis=1)
    nz = wsum > 0
    field[nz] /= wsum[nz, None]
    return field.reshape(spec.dims + (3,))


def divergence(vec: np.ndarray, h: float) -> np.ndarray:
    """Central-difference divergence; the field is taken as zero outside the grid."""
    out = np.zeros(vec.shape[:3])
    for ax in range(3):
        comp = np.pad(vec[..., ax], [(1, 1) if a == ax else (0, 0) for a in range(3)])
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[ax] = slice(2, None)
        lo[ax] = slice(0, -2)
        out += (comp[tuple(hi)] - comp[tuple(lo)]) / (2 * h)
    return out


def sample_field(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a cell-centered field, clamped at the grid edge."""
    spec = field.spec
    g = (np.asarray(points, float) - spec.origin) / spec.voxel_size - 0.5
    hi = np.asarray(spec.dims) - 1
    g = np.clip(g, 0, hi)
    base = np.minimum(np.floor(g).astype(np.int64), np.maximum(hi - 1, 0))
    frac = g - base
    out = np.zeros(len(g))
    v = field.values
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                ii = np.minimum(base[:, 0] + i, hi[0])
                jj = np.minimum(base[:, 1] + j, hi[1])
                kk = np.minimum(base[:, 2] + k, hi[2])
                w = (
                    (frac[:, 0] if i else 1 - frac[:, 0])
                    * (frac[:, 1] if j else 1 - frac[:, 1])
                    * (frac[:, 2] if k else 1 - frac[:, 2])
                )
                out += w * v[ii, jj, kk]
    return out


@dataclass(eq=False)
class Reconstruction:
    mesh: TriangleMesh
    field: ScalarField
    iso: float
    dropped: int
    solve: PoissonSolution


def poisson_reconstruct(oriented: OrientedPointCloud, spec: GridSpec, params: SolverParams = SolverParams(),
                        full: bool = False):
    """Reconstruct a triangle mesh from oriented samples on the grid ``spec``.

    Samples outside the grid volume are dropped. The indicator is high on the
    side opposite the normals, so extracted triangles face the sensor side.
    Returns the mesh, or a ``Reconstruction`` with intermediates when ``full``.
    """
    pts = oriented.positions
    inside = spec.inside(spec.voxel_of(pts))
    dropped = int(len(pts) - inside.sum())
    if dropped:
        log.info("dropping %d samples outside the reconstruction grid", dropped)
    if inside.sum() < 10:
        raise ReconstructionError(f"need at least 10 samples inside the grid, got {int(inside.sum())}")
    kept = OrientedPointCloud(oriented.cloud.subset(inside), oriented.normals[inside])
    cells = np.unique(spec.linear(spec.voxel_of(kept.positions)))
    if len(cells) < 2:
        raise ReconstructionError("degenerate input: all samples fall in a single cell")

    vec = splat_normals(kept, spec)
    div = ScalarField(spec, divergence(vec, spec.voxel_size))
    sol = solve_poisson_grid(div, params)
    iso = float(sample_field(sol.field, kept.positions).mean())
    mesh = marching_cubes(sol.field, iso)
    if full:
        return Reconstruction(mesh, sol.field, iso, dropped, sol)
    return mesh


_FIELD_HEADER = struct.Struct("<I3dd3I")


def write_field(path, field: ScalarField) -> None:
    """Debug dump of a scalar field as f32 (magic OCCF, otherwise laid out like .occv)."""
    s = field.spec
    header = FIELD_MAGIC + _FIELD_HEADER.pack(1, *s.origin, s.voxel_size, *s.dims)
    Path(path).write_bytes(header + np.ascontiguousarray(field.values, dtype="<f4").tobytes())


def read_field(path) -> ScalarField:
    buf = Path(path).read_bytes()
    if buf[:4] != FIELD_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {FIELD_MAGIC!r}")
    if len(buf) < 4 + _FIELD_HEADER.size:
        raise TruncatedFileError("truncated field header")
    version, ox, oy, oz, vs, h, w, z = _FIELD_HEADER.unpack_from(buf, 4)
    if version != 1:
        raise VersionError(f"unsupported field version {version}")
    spec = GridSpec((ox, oy, oz), vs, (h, w, z))
    off = 4 + _FIELD_HEADER.size
    if len(buf) < off + 4 * spec.n_voxels:
        raise TruncatedFileError("field payload truncated")
    return ScalarField(spec, np.frombuffer(buf, "<f4", spec.n_voxels, off).astype(np.float64))
