import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from densocc.fileio import BadMagicError
from densocc.geometry import GridSpec, PointCloud, TriangleMesh
from densocc.meshing import marching_cubes
from densocc.normals import OrientedPointCloud, estimate_normals
from densocc.poisson import (
    ConvergenceWarning,
    ReconstructionError,
    ScalarField,
    SolverParams,
    divergence,
    laplacian,
    poisson_reconstruct,
    read_field,
    sample_field,
    solve_poisson_grid,
    write_field,
)


def neumann_matrix(dims, h):
    """Assembled 7-point Neumann Laplacian as a Kronecker sum of 1D path-graph Laplacians."""
    def path(n):
        main = -2.0 * np.ones(n)
        if n > 1:
            main[0] = main[-1] = -1.0
        else:
            main[:] = 0.0
        return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1])

    a, b, c = (path(n) for n in dims)
    ia, ib, ic = (sp.identity(n) for n in dims)
    return (sp.kron(sp.kron(a, ib), ic) + sp.kron(sp.kron(ia, b), ic) + sp.kron(sp.kron(ia, ib), c)) / h**2


def test_laplacian_matches_assembled_matrix(rng):
    dims = (5, 7, 4)
    x = rng.normal(size=dims)
    L = neumann_matrix(dims, 0.3)
    assert np.abs(laplacian(x, 0.3).ravel() - L @ x.ravel()).max() < 1e-10


def test_divergence_of_linear_field():
    # v = (x, 2y, -z): divergence 2 everywhere away from the zero-padded border
    n, h = 8, 0.5
    c = (np.arange(n) + 0.5) * h
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    v = np.stack([x, 2 * y, -z], axis=-1)
    d = divergence(v, h)
    assert np.allclose(d[1:-1, 1:-1, 1:-1], 2.0)


def manufactured(n=32, h=1.0 / 32):
    """Sum of separable cosine modes; each is an exact eigenvector of the discrete Neumann Laplacian."""
    i = np.arange(n)
    modes = [((1, 0, 0), 1.0), ((0, 2, 1), 0.5), ((3, 1, 2), 0.25)]
    u = np.zeros((n, n, n))
    f = np.zeros((n, n, n))
    for (a, b, c), amp in modes:
        ca, cb, cc = (np.cos(np.pi * k * (i + 0.5) / n) for k in (a, b, c))
        mode = amp * ca[:, None, None] * cb[None, :, None] * cc[None, None, :]
        lam = sum(-(2 - 2 * np.cos(np.pi * k / n)) / h**2 for k in (a, b, c))
        u += mode
        f += lam * mode
    return u, f


def test_manufactured_neumann_solution():
    n = 32
    u, f = manufactured(n)
    spec = GridSpec((0, 0, 0), 1.0 / n, (n, n, n))
    sol = solve_poisson_grid(ScalarField(spec, f), SolverParams(1e-8, 2000))
    assert sol.converged
    assert sol.relative_residual <= 1e-6
    assert np.abs(sol.field.values - (u - u.mean())).max() <= 1e-5


def test_solution_is_zero_mean_and_constant_rhs_is_trivial():
    spec = GridSpec((0, 0, 0), 1.0, (4, 4, 4))
    sol = solve_poisson_grid(ScalarField(spec, np.full(64, 3.0)))
    assert sol.iterations == 0 and np.all(sol.field.values == 0)


def test_non_convergence_warns():
    u, f = manufactured(16, 1 / 16)
    spec = GridSpec((0, 0, 0), 1 / 16, (16, 16, 16))
    f = f + np.random.default_rng(0).normal(size=f.shape)
    with pytest.warns(ConvergenceWarning):
        sol = solve_poisson_grid(ScalarField(spec, f), SolverParams(1e-12, 3))
    assert not sol.converged


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(tolerance=0)
    with pytest.raises(ValueError):
        SolverParams(max_iterations=0)


def test_plane_normals_face_sensor(rng):
    xy = rng.uniform(-5, 5, (500, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(500)]), frame_index=np.zeros(500, np.uint32))
    on = estimate_normals(cloud, 12, sensor_origins=[[0, 0, 3]])
    assert np.allclose(on.normals, [0, 0, 1], atol=1e-9)
    below = estimate_normals(cloud, 12, point_origins=np.tile([1, 1, -2], (500, 1)))
    assert np.allclose(below.normals, [0, 0, -1], atol=1e-9)


def test_normals_errors():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.zeros((2, 3))), point_origins=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.eye(3)))
    with pytest.raises(ValueError):
        OrientedPointCloud(PointCloud(np.eye(3)), np.eye(3) * 2)


def sphere_field(n=24, r=0.35):
    spec = GridSpec((-0.5, -0.5, -0.5), 1.0 / n, (n, n, n))
    c = spec.centers()
    return spec, ScalarField(spec, r - np.linalg.norm(c, axis=1))  # high inside


def test_marching_cubes_sphere_is_closed_and_outward():
    spec, field = sphere_field()
    mesh = marching_cubes(field, 0.0)
    assert mesh.is_closed() and mesh.euler_characteristic() == 2
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 0.35).max() < spec.voxel_size / 2
    tri = mesh.triangles()
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    # field decreases outward, so triangle normals point away from the center
    assert np.all(np.einsum("ij,ij->i", nrm, tri.mean(axis=1)) > 0)
    assert abs(mesh.area() / (4 * np.pi * 0.35**2) - 1) < 0.05


def test_marching_cubes_no_crossing():
    spec, field = sphere_field()
    assert len(marching_cubes(field, 10.0).faces) == 0
    flat = ScalarField(GridSpec((0, 0, 0), 1.0, (1, 4, 4)), np.zeros(16))
    assert len(marching_cubes(flat, 0.0).vertices) == 0


def test_sample_field_reproduces_linear_function(rng):
    spec = GridSpec((1, 2, 3), 0.25, (6, 7, 8))
    c = spec.centers()
    coef = np.array([0.3, -1.2, 2.0])
    field = ScalarField(spec, c @ coef + 4)
    lo = spec.origin + 0.5 * spec.voxel_size
    hi = spec.origin + spec.extent - 0.5 * spec.voxel_size
    q = rng.uniform(lo, hi, (200, 3))
    assert np.abs(sample_field(field, q) - (q @ coef + 4)).max() < 1e-12


def test_field_round_trip(tmp_path, rng):
    spec = GridSpec((0.5, -1, 2), 0.1, (3, 4, 5))
    vals = rng.normal(size=60).astype(np.float32).astype(np.float64)
    write_field(tmp_path / "f.occf", ScalarField(spec, vals))
    back = read_field(tmp_path / "f.occf")
    assert back.spec == spec and np.array_equal(back.values.ravel(), vals)
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(BadMagicError):
        read_field(tmp_path / "bad")


def analytic_sphere_samples(n, r, rng):
    p = rng.normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return OrientedPointCloud(PointCloud(p * r), p)


def test_poisson_sphere_from_exact_normals(rng):
    spec = GridSpec((-4, -4, -4), 8 / 48, (48, 48, 48))
    mesh = poisson_reconstruct(analytic_sphere_samples(6000, 2.0, rng), spec)
    assert mesh.is_closed() and mesh.euler_characteristic() == 2
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 2).max() < spec.voxel_size


def test_poisson_input_errors(rng):
    spec = GridSpec((-4, -4, -4), 0.5, (16, 16, 16))
    far = OrientedPointCloud(PointCloud(np.full((20, 3), 100.0)), np.tile([0, 0, 1.0], (20, 1)))
    with pytest.raises(ReconstructionError):
        poisson_reconstruct(far, spec)
    one_cell = OrientedPointCloud(PointCloud(rng.uniform(0.01, 0.2, (20, 3))), np.tile([0, 0, 1.0], (20, 1)))
    with pytest.raises(ReconstructionError):
        poisson_reconstruct(one_cell, spec)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_reconstruction_translation_equivariant(seed):
    # shifting samples and grid by whole voxels shifts the mesh by the same vector
    rng = np.random.default_rng(seed)
    spec = GridSpec((-2, -2, -2), 0.25, (16, 16, 16))
    samples = analytic_sphere_samples(800, 1.2, rng)
    shift = rng.integers(-3, 4, 3) * 0.25
    moved = OrientedPointCloud(PointCloud(samples.positions + shift), samples.normals)
    a = poisson_reconstruct(samples, spec)
    b = poisson_reconstruct(moved, GridSpec(spec.origin + shift, 0.25, spec.dims))
    assert len(a.faces) == len(b.faces)
    assert np.abs(a.vertices + shift - b.vertices).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 7), seed=st.integers(0, 2**31 - 1))
def test_marching_cubes_meshes_are_closed_inside_grid(n, seed):
    # a random field padded with a low border never touches the boundary, so the surface closes
    rng = np.random.default_rng(seed)
    vals = np.full((n + 2,) * 3, -1.0)
    vals[1:-1, 1:-1, 1:-1] = rng.uniform(-1, 1, (n, n, n))
    spec = GridSpec((0, 0, 0), 1.0, vals.shape)
    mesh = marching_cubes(ScalarField(spec, vals), 0.1)
    if len(mesh.faces):
        assert mesh.is_closed()
    assert isinstance(mesh, TriangleMesh)
