"""Uniform triangulation of the unit square with tagged boundary edges."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# side tags; Gamma0 is the (reference) control boundary
GAMMA0, GAMMA1, GAMMA2, GAMMA3 = 0, 1, 2, 3
TAG_NAMES = {GAMMA0: "Gamma0", GAMMA1: "Gamma1", GAMMA2: "Gamma2", GAMMA3: "Gamma3"}
TAG_IDS = {name: tag for tag, name in TAG_NAMES.items()}


@dataclass(frozen=True)
class Mesh:
    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    edge_tags: np.ndarray
    edge_triangle: np.ndarray

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return math.sqrt(2.0) / self.n

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def boundary_edges(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == tag)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(n: int) -> Mesh:
    """n x n squares, each cut along its (0,0)-(1,1) diagonal."""
    if int(n) != n or n < 2:
        raise ValueError("mesh needs n >= 2 subdivisions per side")
    n = int(n)
    ticks = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.concatenate([np.column_stack([v00, v10, v11]),
                                np.column_stack([v00, v11, v01])])

    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    sorted_pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(sorted_pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    triangle_edges = inverse.reshape(-1, 3)

    edge_triangle = np.full(edges.shape[0], -1)
    edge_triangle[inverse[::-1]] = np.repeat(np.arange(triangles.shape[0]), 3)[::-1]

    edge_tags = np.full(edges.shape[0], -1)
    boundary = counts == 1
    mid = vertices[edges].mean(axis=1)
    tol = 1e-12
    for tag, mask in ((GAMMA0, mid[:, 1] < tol), (GAMMA1, mid[:, 0] > 1 - tol),
                      (GAMMA2, mid[:, 1] > 1 - tol), (GAMMA3, mid[:, 0] < tol)):
        edge_tags[boundary & mask] = tag

    return Mesh(n=n, vertices=vertices, triangles=triangles, edges=edges,
                triangle_edges=triangle_edges, edge_tags=edge_tags, edge_triangle=edge_triangle)


def export_mesh(mesh: Mesh, path: str | Path) -> None:
    """Plain-text dump: vertices, triangles and tagged boundary edges."""
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"triangles {mesh.triangles.shape[0]}")
    lines += [" ".join(map(str, t)) for t in mesh.triangles]
    bnd = np.flatnonzero(mesh.edge_tags >= 0)
    lines.append(f"boundary_edges {bnd.size}")
    lines += [f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {TAG_NAMES[mesh.edge_tags[e]]}" for e in bnd]
    Path(path).write_text("\n".join(lines) + "\n")
