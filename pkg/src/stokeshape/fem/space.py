"""Taylor-Hood (P2 velocity / P1 pressure) spaces on a :class:`Mesh`."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mesh import GAMMA0, TAG_IDS, Mesh
from .quadrature import triangle_rule


def p2_basis(ref: np.ndarray):
    """P2 Lagrange basis on the reference triangle.

    Local node order: three vertices, then midpoints of edges 01, 12, 20.
    Returns values (..., 6) and reference gradients (..., 6, 2).
    """
    xi, eta = ref[..., 0], ref[..., 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    vals = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], -1)
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    L = [l0[..., None], l1[..., None], l2[..., None]]
    grads = np.stack([(4 * L[0] - 1) * g0, (4 * L[1] - 1) * g1, (4 * L[2] - 1) * g2,
                      4 * (L[0] * g1 + L[1] * g0), 4 * (L[1] * g2 + L[2] * g1),
                      4 * (L[2] * g0 + L[0] * g2)], -2)
    return vals, grads


def p1_basis(ref: np.ndarray):
    xi, eta = ref[..., 0], ref[..., 1]
    vals = np.stack([1.0 - xi - eta, xi, eta], -1)
    grads = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), ref.shape[:-1] + (3, 2))
    return vals, grads


@dataclass(frozen=True)
class BoundaryLayout:
    """Which side of the square plays which role.

    The wall (control boundary) is always Gamma0, the bottom side.
    """

    inflow: str = "Gamma3"
    outflow: str = "Gamma1"
    symmetry: str = "Gamma2"

    def __post_init__(self):
        sides = {self.inflow, self.outflow, self.symmetry}
        if sides != {"Gamma1", "Gamma2", "Gamma3"}:
            raise ValueError("inflow/outflow/symmetry must be a permutation of Gamma1..Gamma3")

    @property
    def tags(self) -> dict[str, int]:
        return {"wall": GAMMA0, "inflow": TAG_IDS[self.inflow],
                "outflow": TAG_IDS[self.outflow], "symmetry": TAG_IDS[self.symmetry]}


@dataclass(frozen=True)
class ElementData:
    """Per-element affine geometry and basis data at the quadrature points."""

    ref_points: np.ndarray
    points: np.ndarray      # (nt, nq, 2) reference-domain coordinates
    weights: np.ndarray     # (nt, nq) quadrature weights times |det J|
    p2: np.ndarray          # (nq, 6)
    p2_grad: np.ndarray     # (nt, nq, 6, 2)
    p1: np.ndarray          # (nq, 3)
    p1_grad: np.ndarray     # (nt, 3, 2)


@dataclass(frozen=True, eq=False)
class TaylorHoodSpace:
    mesh: Mesh
    layout: BoundaryLayout = field(default_factory=BoundaryLayout)

    @property
    def n_nodes(self) -> int:
        """Number of P2 nodes (vertices and edge midpoints)."""
        return self.mesh.n_vertices + self.mesh.n_edges

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_dofs(self) -> int:
        return self.n_velocity + self.n_pressure

    @cached_property
    def node_coords(self) -> np.ndarray:
        m = self.mesh
        return np.vstack([m.vertices, m.vertices[m.edges].mean(axis=1)])

    @cached_property
    def p2_dofs(self) -> np.ndarray:
        m = self.mesh
        return np.hstack([m.triangles, m.n_vertices + m.triangle_edges])

    @property
    def p1_dofs(self) -> np.ndarray:
        return self.mesh.triangles

    def boundary_nodes(self, tag: int) -> np.ndarray:
        """P2 nodes on the closed boundary side ``tag``."""
        m = self.mesh
        edges = m.boundary_edges(tag)
        return np.unique(np.concatenate([m.edges[edges].ravel(), m.n_vertices + edges]))

    @cached_property
    def constrained(self) -> np.ndarray:
        """Boolean mask over the velocity dofs [ux nodes, uy nodes]."""
        tags = self.layout.tags
        mask = np.zeros(self.n_velocity, dtype=bool)
        full = np.concatenate([self.boundary_nodes(tags["wall"]), self.boundary_nodes(tags["inflow"])])
        mask[full] = True
        mask[self.n_nodes + full] = True
        sym = self.boundary_nodes(tags["symmetry"])
        side = self.layout.symmetry
        normal_component = 1 if side == "Gamma2" else 0
        mask[normal_component * self.n_nodes + sym] = True
        return mask

    @cached_property
    def free_dofs(self) -> np.ndarray:
        """Indices of unconstrained unknowns in the full (velocity, pressure) vector."""
        mask = np.concatenate([~self.constrained, np.ones(self.n_pressure, dtype=bool)])
        return np.flatnonzero(mask)

    def lifting(self, gD) -> np.ndarray:
        """Nodal P2 lifting: gD on inflow nodes, zero on all other constrained nodes."""
        values = np.zeros(self.n_velocity)
        if gD is None:
            return values
        nodes = self.boundary_nodes(self.layout.tags["inflow"])
        xy = self.node_coords[nodes]
        along = xy[:, 1] if self.layout.inflow in ("Gamma1", "Gamma3") else xy[:, 0]
        g = np.asarray(gD(along), dtype=float).reshape(2, -1)
        values[nodes] = g[0]
        values[self.n_nodes + nodes] = g[1]
        wall = self.boundary_nodes(GAMMA0)
        values[wall] = 0.0
        values[self.n_nodes + wall] = 0.0
        sym = self.boundary_nodes(self.layout.tags["symmetry"])
        normal_component = 1 if self.layout.symmetry == "Gamma2" else 0
        values[normal_component * self.n_nodes + sym] = 0.0
        return np.where(self.constrained, values, 0.0)

    def element_data(self, degree: int = 4) -> ElementData:
        cache = self.__dict__.setdefault("_element_cache", {})
        if degree not in cache:
            cache[degree] = _element_data(self.mesh, degree)
        return cache[degree]

    def locate(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Reference-triangle coordinates of ``points`` inside ``elements``."""
        m = self.mesh
        p = m.vertices[m.triangles[elements]]
        J = np.stack([p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :]], -1)
        return np.linalg.solve(J, (points - p[..., 0, :])[..., None])[..., 0]

    def basis_at(self, elements: np.ndarray, points: np.ndarray):
        """P2 values (..., 6) and physical gradients (..., 6, 2) at points in elements."""
        m = self.mesh
        ref = self.locate(elements, points)
        vals, grads = p2_basis(ref)
        p = m.vertices[m.triangles[elements]]
        J = np.stack([p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :]], -1)
        invJ = np.linalg.inv(J)
        return vals, np.einsum("...ik,...kj->...ij", grads, invJ)


def _element_data(mesh: Mesh, degree: int) -> ElementData:
    ref, w = triangle_rule(degree)
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], -1)  # columns are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains degenerate or inverted elements")
    invJ = np.linalg.inv(J)
    points = p[:, None, 0, :] + np.einsum("tij,qj->tqi", J, ref)
    p2, p2g_ref = p2_basis(ref)
    p1, p1g_ref = p1_basis(ref)
    p2_grad = np.einsum("qik,tkj->tqij", p2g_ref, invJ)
    p1_grad = np.einsum("ik,tkj->tij", p1g_ref[0], invJ)
    return ElementData(ref_points=ref, points=points, weights=det[:, None] * w[None, :],
                       p2=p2, p2_grad=p2_grad, p1=p1, p1_grad=p1_grad)


def build_space(mesh: Mesh, layout: BoundaryLayout | None = None) -> TaylorHoodSpace:
    return TaylorHoodSpace(mesh, layout or BoundaryLayout())
