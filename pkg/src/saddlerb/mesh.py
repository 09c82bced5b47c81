"""Structured triangulation of the channel-with-obstacle reference domain."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INTERIOR, INFLOW, OUTFLOW, WALL, OBSTACLE = 0, 1, 2, 3, 4
TAG_NAMES = {INTERIOR: "interior", INFLOW: "inflow", OUTFLOW: "outflow",
             WALL: "wall", OBSTACLE: "obstacle"}


@dataclass
class Mesh:
    vertices: np.ndarray     # (nv, 2)
    triangles: np.ndarray    # (nt, 3), counter-clockwise
    subdomain: np.ndarray    # (nt,)
    edges: np.ndarray        # (ne, 2), sorted vertex pairs
    tri_edges: np.ndarray    # (nt, 3), local edge k is opposite local vertex k
    edge_tags: np.ndarray    # (ne,)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self, vertices=None) -> np.ndarray:
        v = self.vertices if vertices is None else vertices
        p0, p1, p2 = (v[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))

    def hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.vertices, self.triangles, self.subdomain, self.edge_tags):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def export(self, path) -> None:
        """Write the plain-text mesh format.

        Layout::

            # saddlerb mesh v1
            vertices <nv>
            <x> <y>                 (nv lines)
            triangles <nt>
            <i> <j> <k> <subdomain> (nt lines, 0-based vertex ids)
            edges <nb>
            <i> <j> <tag>           (boundary edges only; tag name)
        """
        lines = ["# saddlerb mesh v1", f"vertices {self.n_vertices}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines.append(f"triangles {self.n_triangles}")
        lines += [f"{a} {b} {c} {s}" for (a, b, c), s in zip(self.triangles, self.subdomain)]
        bnd = np.flatnonzero(self.edge_tags != INTERIOR)
        lines.append(f"edges {len(bnd)}")
        lines += [f"{self.edges[e, 0]} {self.edges[e, 1]} {TAG_NAMES[self.edge_tags[e]]}"
                  for e in bnd]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh_text(path):
    """Parse the text format written by :meth:`Mesh.export` (vertices, triangles, tags)."""
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    it = iter(t for t in tokens if t and not t.startswith("#"))
    nv = int(next(it).split()[1])
    verts = np.array([[float(x) for x in next(it).split()] for _ in range(nv)])
    nt = int(next(it).split()[1])
    rows = [next(it).split() for _ in range(nt)]
    tris = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    sub = np.array([int(r[3]) for r in rows])
    nb = int(next(it).split()[1])
    bedges = [next(it).split() for _ in range(nb)]
    return verts, tris, sub, bedges


def _unique_edges(triangles):
    local = [(1, 2), (2, 0), (0, 1)]
    all_edges = np.concatenate([np.sort(triangles[:, list(p)], axis=1) for p in local])
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    nt = len(triangles)
    tri_edges = inverse.reshape(3, nt).T
    return edges, tri_edges


def structured_mesh(xbreaks, ybreaks, nx, ny, hole, tag_edge, diag_rule):
    """Tensor-grid triangulation over rectangular blocks.

    ``xbreaks``/``ybreaks`` delimit the block columns/rows, ``nx``/``ny`` give
    cells per column/row, ``hole(i, j)`` removes a block, ``tag_edge`` maps
    an edge midpoint to a boundary tag, and ``diag_rule(cell)`` picks the
    cell diagonal (``True`` for the one through the lower-left corner).
    """
    xs = [np.linspace(xbreaks[i], xbreaks[i + 1], nx[i] + 1) for i in range(len(nx))]
    ys = [np.linspace(ybreaks[j], ybreaks[j + 1], ny[j] + 1) for j in range(len(ny))]
    xg = np.concatenate([xs[0]] + [x[1:] for x in xs[1:]])
    yg = np.concatenate([ys[0]] + [y[1:] for y in ys[1:]])
    # snap block boundaries exactly
    xcol = np.concatenate([[0], np.cumsum(nx)])
    yrow = np.concatenate([[0], np.cumsum(ny)])
    xg[xcol] = xbreaks
    yg[yrow] = ybreaks
    col_of = np.repeat(np.arange(len(nx)), nx)
    row_of = np.repeat(np.arange(len(ny)), ny)

    vid = -np.ones((len(xg), len(yg)), dtype=np.int64)
    verts, tris, subs = [], [], []

    def vertex(i, j):
        if vid[i, j] < 0:
            vid[i, j] = len(verts)
            verts.append((xg[i], yg[j]))
        return vid[i, j]

    nblock_x = len(nx)
    for j in range(len(yg) - 1):
        for i in range(len(xg) - 1):
            bi, bj = col_of[i], row_of[j]
            if hole(bi, bj):
                continue
            sub = bj * nblock_x + bi
            a, b = vertex(i, j), vertex(i + 1, j)
            c, d = vertex(i + 1, j + 1), vertex(i, j + 1)
            cell = (xg[i], xg[i + 1], yg[j], yg[j + 1])
            if diag_rule(cell):
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
            subs += [sub, sub]

    vertices = np.array(verts, dtype=float)
    triangles = np.array(tris, dtype=np.int64)
    subdomain = np.array(subs, dtype=np.int64)
    edges, tri_edges = _unique_edges(triangles)
    count = np.bincount(tri_edges.ravel(), minlength=len(edges))
    tags = np.zeros(len(edges), dtype=np.int64)
    for e in np.flatnonzero(count == 1):
        mid = vertices[edges[e]].mean(axis=0)
        tags[e] = tag_edge(mid)
    return Mesh(vertices, triangles, subdomain, edges, tri_edges, tags)
