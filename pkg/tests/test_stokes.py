import numpy as np
import pytest
import scipy.sparse as sp

from saddlerb import fem
from saddlerb.errors import InvalidGeometry, OutOfDomain
from saddlerb.kernels import solve_saddle
from saddlerb.mesh import INFLOW, OBSTACLE, OUTFLOW, WALL, read_mesh_text, structured_mesh
from saddlerb.stokes import (BenchmarkConfig, boundary_flux, build_benchmark, direct_operators,
                             lagrangian, map_points, truth_solve)

MUS = [np.array([0.2, 0.2]), np.array([0.6, 0.6]), np.array([0.3, 0.5]), np.array([0.55, 0.25])]


def unit_square_mesh(n):
    def diag(cell):
        x0, x1, y0, y1 = cell
        return not ((y0 == 0.0 and x1 == 1.0) or (y1 == 1.0 and x0 == 0.0))

    return structured_mesh([0.0, 1.0], [0.0, 1.0], [n], [n], lambda i, j: False,
                           lambda mid: WALL, diag)


def test_taylor_hood_reproduces_quadratic_stokes_flow():
    # u = (y^2, x^2), p = 2x + 2y solves -lap u + grad p = 0, div u = 0
    mesh = unit_square_mesh(4)
    K, D = fem.direct_stokes_operators(mesh, mesh.vertices)
    nodes = fem.p2_node_coords(mesh)
    n2 = len(nodes)
    u_exact = np.concatenate([nodes[:, 1] ** 2, nodes[:, 0] ** 2])
    p_exact = 2.0 * mesh.vertices[:, 0] + 2.0 * mesh.vertices[:, 1]
    bnd = np.zeros(n2, bool)
    bedges = np.flatnonzero(mesh.edge_tags != 0)
    bnd[mesh.edges[bedges].ravel()] = True
    bnd[mesh.n_vertices + bedges] = True
    dmask = np.concatenate([bnd, bnd])
    free, fixed = np.flatnonzero(~dmask), np.flatnonzero(dmask)
    K, D = sp.csr_matrix(K), sp.csr_matrix(D)
    # pin the pressure at vertex 0 to remove the constant mode
    rows = np.arange(1, mesh.n_vertices)
    f = -K[free][:, fixed] @ u_exact[fixed] - D[0, free].toarray().ravel() * p_exact[0]
    g = -D[rows][:, fixed] @ u_exact[fixed]
    u, p = solve_saddle(K[free][:, free], D[rows][:, free], f, g)
    np.testing.assert_allclose(u, u_exact[free], atol=1e-11)
    np.testing.assert_allclose(p, p_exact[rows], atol=1e-10)


def test_benchmark_mesh_structure(disc):
    mesh = disc.mesh
    assert np.all(mesh.areas() > 0)
    tags = set(np.unique(mesh.edge_tags))
    assert {INFLOW, OUTFLOW, WALL, OBSTACLE} <= tags
    cfg = disc.config
    total = cfg.length * cfg.height - 2 * cfg.reference[0] * cfg.reference[1]
    assert mesh.areas().sum() == pytest.approx(total, rel=1e-12)
    assert disc.space.n_total == disc.space.n_velocity + disc.space.n_pressure


def test_truth_dimension_at_desk_refinement():
    mesh, space = build_benchmark(BenchmarkConfig(refinement=1))
    assert 3_000 <= space.n_total <= 15_000


@pytest.mark.parametrize("mu", MUS)
def test_mapped_geometry(disc, mu):
    cfg = disc.config
    verts = map_points(cfg, disc.mesh.vertices, mu)
    areas = disc.mesh.areas(verts)
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(cfg.length * cfg.height - 2 * mu[0] * mu[1], rel=1e-12)
    obst = disc.mesh.edges[disc.mesh.edge_tags == OBSTACLE].ravel()
    assert verts[obst, 1].max() == pytest.approx(mu[1])
    assert verts[obst, 0].max() - verts[obst, 0].min() == pytest.approx(2 * mu[0])


@pytest.mark.parametrize("mu", MUS)
def test_affine_assembly_matches_direct_assembly(disc, mu):
    A_dir, B_dir = direct_operators(disc, mu)
    A, B = disc.A(mu), disc.B(mu)
    assert abs(A - A_dir).max() <= 1e-10 * abs(A_dir).max()
    assert abs(B - B_dir).max() <= 1e-10 * abs(B_dir).max()


def test_operators_symmetric(disc):
    A = disc.A(MUS[2])
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()
    assert abs(disc.X - disc.X.T).max() <= 1e-14 * abs(disc.X).max()


def expected_inflow(cfg, mu):
    # profile 4 eta (1 - eta) in reference height eta, stretched blockwise in y
    prof = np.polynomial.Polynomial([0.0, 4.0, -4.0]).integ()
    m = cfg.reference[1]
    lower = (prof(m) - prof(0.0)) * mu[1] / m
    upper = (prof(1.0) - prof(m)) * (cfg.height - mu[1]) / (cfg.height - m)
    return -(lower + upper)


@pytest.mark.parametrize("mu", MUS)
def test_truth_solution_conserves_mass(disc, mu):
    sol = truth_solve(disc, mu)
    assert sol.residual <= 1e-9
    inflow = boundary_flux(disc, sol.velocity, mu, INFLOW)
    outflow = boundary_flux(disc, sol.velocity, mu, OUTFLOW)
    assert inflow == pytest.approx(expected_inflow(disc.config, mu), rel=1e-12)
    assert inflow + outflow == pytest.approx(0.0, abs=1e-10)


def test_truth_solution_is_lagrangian_saddle_point(disc, rng):
    mu = MUS[3]
    sol = truth_solve(disc, mu)
    base = lagrangian(disc, mu, sol.u, sol.p)
    A = disc.A(mu)
    for _ in range(3):
        v = rng.standard_normal(len(sol.u))
        q = rng.standard_normal(len(sol.p))
        grow = lagrangian(disc, mu, sol.u + v, sol.p) - base
        assert grow == pytest.approx(0.5 * v @ (A @ v), rel=1e-8)
        assert lagrangian(disc, mu, sol.u, sol.p + q) == pytest.approx(base, abs=1e-9 * abs(base))


def test_truth_solve_out_of_domain(disc):
    with pytest.raises(OutOfDomain):
        truth_solve(disc, [0.1, 0.3])


@pytest.mark.parametrize("kwargs", [
    dict(lower=(0.2, 0.2), upper=(0.6, 1.0)),
    dict(lower=(0.2, 0.2), upper=(1.2, 0.6)),
    dict(lower=(0.0, 0.2), upper=(0.6, 0.6), reference=(0.3, 0.4)),
    dict(reference=(0.9, 0.4)),
])
def test_invalid_geometry(kwargs):
    with pytest.raises(InvalidGeometry):
        build_benchmark(BenchmarkConfig(refinement=0, **kwargs))


def test_mesh_hash_deterministic_and_export_round_trip(disc, tmp_path):
    mesh, _ = build_benchmark(BenchmarkConfig(refinement=0))
    assert mesh.hash() == disc.mesh.hash()
    path = tmp_path / "mesh.txt"
    mesh.export(path)
    verts, tris, sub, bedges = read_mesh_text(path)
    np.testing.assert_array_equal(verts, mesh.vertices)
    np.testing.assert_array_equal(tris, mesh.triangles)
    np.testing.assert_array_equal(sub, mesh.subdomain)
    assert len(bedges) == int(np.count_nonzero(mesh.edge_tags))
