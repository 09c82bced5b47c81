"""P2-P1 (Taylor-Hood) element kernels and sparse assembly on triangle meshes.

Velocity unknowns are ordered component-major: ``[v_x at all P2 nodes,
v_y at all P2 nodes]``.  P2 nodes are the mesh vertices followed by the
edge midpoints.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# 6-point rule, exact for degree 4 (weights sum to 1 on the reference triangle)
_A, _B = 0.445948490915965, 0.091576213509771
_WA, _WB = 0.223381589678011, 0.109951743655322
QUAD_POINTS = np.array([
    [_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
    [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B],
])
QUAD_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)


def _bary(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - x - y, x, y], axis=1)


_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE = [(1, 2), (2, 0), (0, 1)]


def p2_values(pts):
    lam = _bary(pts)
    vals = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(3)]
    vals += [4 * lam[:, a] * lam[:, b] for a, b in _EDGE]
    return np.stack(vals, axis=1)


def p2_ref_gradients(pts):
    """Reference gradients, shape ``(nq, 6, 2)``."""
    lam = _bary(pts)
    out = np.empty((len(pts), 6, 2))
    for i in range(3):
        out[:, i, :] = (4 * lam[:, i] - 1)[:, None] * _DLAM[i]
    for k, (a, b) in enumerate(_EDGE):
        out[:, 3 + k, :] = 4 * (lam[:, a, None] * _DLAM[b] + lam[:, b, None] * _DLAM[a])
    return out


def p1_values(pts):
    return _bary(pts)


PHI2 = p2_values(QUAD_POINTS)          # (nq, 6)
DPHI2 = p2_ref_gradients(QUAD_POINTS)  # (nq, 6, 2)
PHI1 = p1_values(QUAD_POINTS)          # (nq, 3)


def p2_dofmap(mesh) -> np.ndarray:
    """Element-to-P2-node map, shape ``(nt, 6)``."""
    return np.hstack([mesh.triangles, mesh.n_vertices + mesh.tri_edges])


def p2_node_coords(mesh, vertices=None) -> np.ndarray:
    v = mesh.vertices if vertices is None else vertices
    mids = 0.5 * (v[mesh.edges[:, 0]] + v[mesh.edges[:, 1]])
    return np.vstack([v, mids])


def geometry(mesh, vertices=None):
    """Per-triangle ``(|det J|, J^{-1})``."""
    v = mesh.vertices if vertices is None else vertices
    p0, p1, p2 = (v[mesh.triangles[:, k]] for k in range(3))
    J = np.stack([p1 - p0, p2 - p0], axis=2)  # J[:, :, c] = column c
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains degenerate or inverted triangles")
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return det, inv


def _phys_grads(inv):
    # grad_x phi = J^{-T} grad_ref phi  ->  (nt, nq, 6, 2)
    return np.einsum("qic,tcd->tqid", DPHI2, inv)


def _scatter(local, rows, cols, shape):
    nt, nr, nc = local.shape
    r = np.repeat(rows[:, :, None], nc, axis=2).ravel()
    c = np.repeat(cols[:, None, :], nr, axis=1).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def scalar_derivative_blocks(mesh, dofmap, n2, mask=None, vertices=None):
    """``(Kxx, Kyy)`` with ``Kxx_ij = int d_x phi_j d_x phi_i`` over masked triangles."""
    det, inv = geometry(mesh, vertices)
    g = _phys_grads(inv)
    w = QUAD_WEIGHTS[None, :] * (0.5 * det)[:, None]
    if mask is not None:
        w = w * mask[:, None]
    kxx = np.einsum("tq,tqi,tqj->tij", w, g[..., 0], g[..., 0])
    kyy = np.einsum("tq,tqi,tqj->tij", w, g[..., 1], g[..., 1])
    return (_scatter(kxx, dofmap, dofmap, (n2, n2)),
            _scatter(kyy, dofmap, dofmap, (n2, n2)))


def scalar_mass_p2(mesh, dofmap, n2, vertices=None):
    det, _ = geometry(mesh, vertices)
    w = QUAD_WEIGHTS[None, :] * (0.5 * det)[:, None]
    m = np.einsum("tq,qi,qj->tij", w, PHI2, PHI2)
    return _scatter(m, dofmap, dofmap, (n2, n2))


def scalar_mass_p1(mesh, vertices=None):
    det, _ = geometry(mesh, vertices)
    w = QUAD_WEIGHTS[None, :] * (0.5 * det)[:, None]
    m = np.einsum("tq,qi,qj->tij", w, PHI1, PHI1)
    tri = mesh.triangles
    return _scatter(m, tri, tri, (mesh.n_vertices, mesh.n_vertices))


def divergence_blocks(mesh, dofmap, n2, mask=None, vertices=None):
    """``(Dx, Dy)`` with ``Dx_ki = -int psi_k d_x phi_i`` (P1 rows, P2 columns)."""
    det, inv = geometry(mesh, vertices)
    g = _phys_grads(inv)
    w = QUAD_WEIGHTS[None, :] * (0.5 * det)[:, None]
    if mask is not None:
        w = w * mask[:, None]
    dx = -np.einsum("tq,qk,tqi->tki", w, PHI1, g[..., 0])
    dy = -np.einsum("tq,qk,tqi->tki", w, PHI1, g[..., 1])
    shape = (mesh.n_vertices, n2)
    return (_scatter(dx, mesh.triangles, dofmap, shape),
            _scatter(dy, mesh.triangles, dofmap, shape))


def vector_block(Sxx, Syy=None):
    """Block-diagonal vector operator acting on both velocity components."""
    return sp.block_diag([Sxx, Sxx if Syy is None else Syy], format="csr")


def direct_stokes_operators(mesh, vertices):
    """Full-gradient stiffness and divergence matrices on a (mapped) mesh.

    Independent of any affine splitting; used to cross-check decompositions.
    """
    dofmap = p2_dofmap(mesh)
    n2 = mesh.n_vertices + len(mesh.edges)
    kxx, kyy = scalar_derivative_blocks(mesh, dofmap, n2, vertices=vertices)
    dx, dy = divergence_blocks(mesh, dofmap, n2, vertices=vertices)
    return vector_block(kxx + kyy), sp.hstack([dx, dy], format="csr")
