"""Parametrized Stokes flow past a rectangular obstacle in a 2D channel.

Channel ``(0, L) x (0, H)``; a rectangular obstacle of half-width ``mu[0]``
and height ``mu[1]`` stands on the bottom wall, centred at ``x = xc``.  The
fluid domain is cut into nine axis-aligned blocks (five columns, two rows,
minus the obstacle) so that the map from the reference configuration
``mu_ref`` is affine on every block.  Pulled back to the reference domain,
``a`` and ``b`` then split into per-block terms with rational coefficients.

Boundary conditions: parabolic inflow ``(4 y (1 - y), 0)`` prescribed in
reference coordinates at ``x = 0``, no-slip on walls and obstacle,
do-nothing outflow at ``x = L``.  Dirichlet data are removed by a discrete
lifting, so the unknown velocity lives in the homogeneous space ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import fem
from .affine import AffineDecomposition, Const, Coord, ParameterDomain
from .errors import InvalidGeometry
from .kernels import SaddleFactor, SPDFactor
from .mesh import INFLOW, OBSTACLE, OUTFLOW, WALL, Mesh, structured_mesh

_EPS = 1e-12


@dataclass
class BenchmarkConfig:
    length: float = 5.0
    height: float = 1.0
    obstacle_center: float = 1.5
    left_break: float = 0.5
    right_break: float = 2.5
    lower: tuple = (0.2, 0.2)
    upper: tuple = (0.6, 0.6)
    reference: tuple = (0.4, 0.4)
    base_resolution: int = 6     # cells per unit length at refinement 0
    refinement: int = 1
    inflow_peak: float = 1.0

    def to_dict(self):
        d = asdict(self)
        d["lower"], d["upper"], d["reference"] = list(self.lower), list(self.upper), list(self.reference)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("lower", "upper", "reference"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)

    @property
    def domain(self) -> ParameterDomain:
        return ParameterDomain(tuple(self.lower), tuple(self.upper))

    def validate(self):
        if self.refinement < 0:
            raise ValueError("refinement level must be >= 0")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be >= 1")
        try:
            dom = self.domain
        except ValueError as exc:
            raise InvalidGeometry(str(exc)) from exc
        H, xc = self.height, self.obstacle_center
        if not dom.contains(self.reference):
            raise InvalidGeometry("reference parameter outside the parameter domain")
        for mu in (np.array(self.lower), np.array(self.upper), np.array(self.reference)):
            if mu[0] <= 0 or mu[1] <= 0:
                raise InvalidGeometry("obstacle must have positive width and height")
            if mu[1] >= H - _EPS:
                raise InvalidGeometry("obstacle touches the top wall")
            if not (0 < self.left_break < xc - mu[0] - _EPS):
                raise InvalidGeometry("obstacle reaches the left block boundary")
            if not (xc + mu[0] + _EPS < self.right_break < self.length):
                raise InvalidGeometry("obstacle reaches the right block boundary")


@dataclass
class TaylorHoodSpace:
    n_p2: int                  # scalar P2 nodes
    n_p1: int                  # pressure nodes (= mesh vertices)
    dofmap: np.ndarray         # (nt, 6) P2 nodes per triangle
    dirichlet: np.ndarray      # bool mask over the 2 * n_p2 velocity dofs
    free: np.ndarray           # indices of free velocity dofs

    @property
    def n_velocity(self) -> int:
        return len(self.free)

    @property
    def n_pressure(self) -> int:
        return self.n_p1

    @property
    def n_total(self) -> int:
        return self.n_velocity + self.n_pressure


def _breaks(cfg: BenchmarkConfig):
    """Reference break values and their parameter expressions."""
    xc, c1, c2 = cfg.obstacle_center, cfg.left_break, cfg.right_break
    m1, m2 = cfg.reference
    xref = np.array([0.0, c1, xc - m1, xc + m1, c2, cfg.length])
    yref = np.array([0.0, m2, cfg.height])
    # widths written so that mirror-symmetric blocks share identical expressions
    widths = [Const(c1), Const(xc - c1) - Coord(0), 2.0 * Coord(0),
              Const(c2 - xc) - Coord(0), Const(cfg.length - c2)]
    heights = [Coord(1) + 0.0, Const(cfg.height) - Coord(1)]
    # normalize by the expression's own reference value: exactly 1 at mu_ref
    ref = np.array(cfg.reference, float)
    sx = [w / Const(w(ref)) for w in widths]
    sy = [h / Const(h(ref)) for h in heights]
    return xref, yref, sx, sy


def physical_breaks(cfg: BenchmarkConfig, mu):
    xc = cfg.obstacle_center
    x = np.array([0.0, cfg.left_break, xc - mu[0], xc + mu[0], cfg.right_break, cfg.length])
    y = np.array([0.0, mu[1], cfg.height])
    return x, y


def map_points(cfg: BenchmarkConfig, pts, mu):
    """Piecewise-affine map from the reference to the configuration at ``mu``."""
    xref, yref, _, _ = _breaks(cfg)
    xphys, yphys = physical_breaks(cfg, mu)
    out = np.empty_like(pts)
    out[:, 0] = np.interp(pts[:, 0], xref, xphys)
    out[:, 1] = np.interp(pts[:, 1], yref, yphys)
    return out


def block_scalings(cfg: BenchmarkConfig, mu):
    """``(sx, sy)`` per block index ``row * 5 + col`` evaluated at ``mu``."""
    _, _, sx, sy = _breaks(cfg)
    mu = np.asarray(mu, float)
    return {j * 5 + i: (sx[i](mu), sy[j](mu)) for j in range(2) for i in range(5)
            if not (i == 2 and j == 0)}


def build_benchmark(cfg: BenchmarkConfig):
    """Mesh and Taylor-Hood space of the reference configuration."""
    cfg.validate()
    xref, yref, _, _ = _breaks(cfg)
    n = cfg.base_resolution * 2 ** cfg.refinement
    nx = [max(1, int(round((xref[i + 1] - xref[i]) * n))) for i in range(5)]
    ny = [max(1, int(round((yref[j + 1] - yref[j]) * n))) for j in range(2)]
    L, H = cfg.length, cfg.height
    xl, xr, yt = xref[2], xref[3], yref[1]

    def hole(i, j):
        return i == 2 and j == 0

    def on(a, b):
        return abs(a - b) < 1e-10

    def tag_edge(mid):
        x, y = mid
        if on(x, 0.0):
            return INFLOW
        if on(x, L):
            return OUTFLOW
        if (on(x, xl) or on(x, xr)) and y < yt + 1e-10:
            return OBSTACLE
        if on(y, yt) and xl - 1e-10 <= x <= xr + 1e-10:
            return OBSTACLE
        return WALL

    def diag_rule(cell):
        x0, x1, y0, y1 = cell
        in_obst = xl - 1e-10 <= 0.5 * (x0 + x1) <= xr + 1e-10
        bottom = on(y0, 0.0) or (on(y0, yt) and in_obst)
        top = on(y1, H)
        left = on(x0, 0.0) or (on(x0, xr) and y1 <= yt + 1e-10)
        right = on(x1, L) or (on(x1, xl) and y1 <= yt + 1e-10)
        # never leave a triangle with two no-slip edges (spurious pressure mode)
        if (bottom and right) or (top and left):
            return False
        return True

    mesh = structured_mesh(xref, yref, nx, ny, hole, tag_edge, diag_rule)
    dofmap = fem.p2_dofmap(mesh)
    n2 = mesh.n_vertices + len(mesh.edges)
    dnodes = np.zeros(n2, dtype=bool)
    dir_edges = np.flatnonzero(np.isin(mesh.edge_tags, (INFLOW, WALL, OBSTACLE)))
    dnodes[mesh.edges[dir_edges].ravel()] = True
    dnodes[mesh.n_vertices + dir_edges] = True
    dirichlet = np.concatenate([dnodes, dnodes])
    space = TaylorHoodSpace(n2, mesh.n_vertices, dofmap, dirichlet, np.flatnonzero(~dirichlet))
    return mesh, space


@dataclass
class TruthDiscretization:
    config: BenchmarkConfig
    mesh: Mesh
    space: TaylorHoodSpace
    a: AffineDecomposition
    b: AffineDecomposition
    f: AffineDecomposition
    g: AffineDecomposition
    X: sp.csr_matrix
    Y: sp.csr_matrix
    lift: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def domain(self) -> ParameterDomain:
        return self.config.domain

    @property
    def mu_ref(self) -> np.ndarray:
        return np.array(self.config.reference, float)

    @property
    def n_total(self) -> int:
        return self.space.n_total

    @cached_property
    def X_factor(self) -> SPDFactor:
        return SPDFactor(self.X)

    @cached_property
    def Y_factor(self) -> SPDFactor:
        return SPDFactor(self.Y)

    def A(self, mu):
        return self.a.assemble(mu)

    def B(self, mu):
        return self.b.assemble(mu)

    def full_velocity(self, u):
        out = self.lift.copy()
        out[self.space.free] += u
        return out

    def hash(self) -> str:
        return self.mesh.hash()


def assemble_truth(cfg: BenchmarkConfig, mesh: Mesh, space: TaylorHoodSpace) -> TruthDiscretization:
    _, _, sx, sy = _breaks(cfg)
    n2 = space.n_p2
    free = space.free
    a_thetas, a_terms, b_thetas, b_terms = [], [], [], []
    for sub in np.unique(mesh.subdomain):
        j, i = divmod(int(sub), 5)
        mask = (mesh.subdomain == sub).astype(float)
        kxx, kyy = fem.scalar_derivative_blocks(mesh, space.dofmap, n2, mask=mask)
        dx, dy = fem.divergence_blocks(mesh, space.dofmap, n2, mask=mask)
        a_thetas += [sy[j] / sx[i], sx[i] / sy[j]]
        a_terms += [fem.vector_block(kxx), fem.vector_block(kyy)]
        zero = sp.csr_matrix(dx.shape)
        b_thetas += [sy[j], sx[i]]
        b_terms += [sp.hstack([dx, zero], format="csr"), sp.hstack([zero, dy], format="csr")]

    dom = cfg.domain
    a_full = AffineDecomposition(a_thetas, a_terms, dom, symmetric=True, name="a").merged()
    b_full = AffineDecomposition(b_thetas, b_terms, dom, name="b").merged()

    nodes = fem.p2_node_coords(mesh)
    lift = np.zeros(2 * n2)
    inflow_edges = np.flatnonzero(mesh.edge_tags == INFLOW)
    in_nodes = np.unique(np.concatenate([mesh.edges[inflow_edges].ravel(),
                                         mesh.n_vertices + inflow_edges]))
    y = nodes[in_nodes, 1] / cfg.height
    lift[in_nodes] = 4.0 * cfg.inflow_peak * y * (1.0 - y)

    a = a_full.map_terms(lambda t: sp.csr_matrix(t[free][:, free]))
    b = b_full.map_terms(lambda t: sp.csr_matrix(t[:, free]))
    f = AffineDecomposition(a_full.thetas, [-(t @ lift)[free] for t in a_full.terms], dom,
                            name="f").merged()
    g = AffineDecomposition(b_full.thetas, [-(t @ lift) for t in b_full.terms], dom,
                            name="g").merged()

    kxx, kyy = fem.scalar_derivative_blocks(mesh, space.dofmap, n2)
    m2 = fem.scalar_mass_p2(mesh, space.dofmap, n2)
    X = fem.vector_block(kxx + kyy + m2)
    X = sp.csr_matrix(X[free][:, free])
    Y = sp.csr_matrix(fem.scalar_mass_p1(mesh))
    return TruthDiscretization(cfg, mesh, space, a, b, f, g, X, Y, lift)


def build_truth(cfg: BenchmarkConfig | None = None) -> TruthDiscretization:
    cfg = cfg or BenchmarkConfig()
    mesh, space = build_benchmark(cfg)
    return assemble_truth(cfg, mesh, space)


@dataclass
class TruthSolution:
    mu: np.ndarray
    u: np.ndarray           # homogeneous velocity on the free dofs (element of X)
    p: np.ndarray
    velocity: np.ndarray    # full velocity including the lifting
    residual: float


def truth_solve(disc: TruthDiscretization, mu, extra_f=None, extra_g=None) -> TruthSolution:
    """Solve the truth saddle-point system at ``mu``.

    ``extra_f``/``extra_g`` add body-force style functionals (on the free
    velocity dofs / pressure dofs) to the right-hand side.
    """
    mu = disc.domain.validate(mu)
    A, B = disc.A(mu), disc.B(mu)
    f, g = disc.f.assemble(mu), disc.g.assemble(mu)
    if extra_f is not None:
        f = f + extra_f
    if extra_g is not None:
        g = g + extra_g
    factor = SaddleFactor(A, B)
    u, p = factor.solve(f, g)
    rhs = np.concatenate([f, g])
    res = np.linalg.norm(factor.matrix @ np.concatenate([u, p]) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return TruthSolution(mu, u, p, disc.full_velocity(u), float(res))


def boundary_flux(disc: TruthDiscretization, velocity, mu, tag) -> float:
    """Outward flux ``int u . n ds`` through the inflow or outflow boundary at ``mu``."""
    mesh, n2 = disc.mesh, disc.space.n_p2
    edges = np.flatnonzero(mesh.edge_tags == tag)
    verts = map_points(disc.config, mesh.vertices, mu)
    a, b = mesh.edges[edges, 0], mesh.edges[edges, 1]
    length = np.linalg.norm(verts[b] - verts[a], axis=1)
    ux = velocity[:n2]
    # Simpson's rule is exact for the quadratic trace
    integral = np.sum(length / 6.0 * (ux[a] + 4.0 * ux[mesh.n_vertices + edges] + ux[b]))
    sign = -1.0 if tag == INFLOW else 1.0
    if tag not in (INFLOW, OUTFLOW):
        raise ValueError("flux only defined on inflow/outflow boundaries")
    return float(sign * integral)


def direct_operators(disc: TruthDiscretization, mu):
    """``A(mu)``, ``B(mu)`` assembled directly on the mapped mesh (no affine split)."""
    verts = map_points(disc.config, disc.mesh.vertices, mu)
    K, D = fem.direct_stokes_operators(disc.mesh, verts)
    free = disc.space.free
    return sp.csr_matrix(K[free][:, free]), sp.csr_matrix(D[:, free])


def lagrangian(disc: TruthDiscretization, mu, v, q) -> float:
    """``1/2 a(v,v) + b(v,q) - f(v) - g(q)`` on the homogeneous spaces."""
    A, B = disc.A(mu), disc.B(mu)
    f, g = disc.f.assemble(mu), disc.g.assemble(mu)
    return float(0.5 * v @ (A @ v) + q @ (B @ v) - f @ v - g @ q)
