"""Vectorized quadrature-point evaluation and sparse assembly on a Taylor-Hood space.

Velocity vectors are stored component-blocked, ``[ux at P2 nodes, uy at P2 nodes]``;
velocity gradients at quadrature points have shape (nt, nq, 2, 2) with
``grad[..., c, k] = d u_c / d x_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .quadrature import line_rule
from .space import TaylorHoodSpace


class Assembler:
    """Quadrature and assembly helpers bound to one space and one rule."""

    def __init__(self, space: TaylorHoodSpace, degree: int = 4):
        self.space = space
        self.degree = degree
        self.data = space.element_data(degree)
        self.dofs = space.p2_dofs
        self.pdofs = space.p1_dofs
        nt, nq = self.data.weights.shape
        self._rows6 = np.broadcast_to(self.dofs[:, :, None], (nt, 6, 6)).ravel()
        self._cols6 = np.broadcast_to(self.dofs[:, None, :], (nt, 6, 6)).ravel()

    # -- coordinates --------------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return self.data.points[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.data.points[..., 1]

    @property
    def weights(self) -> np.ndarray:
        return self.data.weights

    # -- field evaluation at quadrature points ---------------------------------
    def scalar(self, nodal: np.ndarray):
        local = nodal[self.dofs]
        vals = local @ self.data.p2.T
        grads = np.einsum("ti,tqik->tqk", local, self.data.p2_grad)
        return vals, grads

    def velocity(self, vec: np.ndarray):
        n = self.space.n_nodes
        ux, gx = self.scalar(vec[:n])
        uy, gy = self.scalar(vec[n:2 * n])
        return np.stack([ux, uy], -1), np.stack([gx, gy], -2)

    def pressure(self, vec: np.ndarray) -> np.ndarray:
        return vec[self.pdofs] @ self.data.p1.T

    # -- matrices -------------------------------------------------------------
    def _p2_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        n = self.space.n_nodes
        return sp.csr_matrix((local.ravel(), (self._rows6, self._cols6)), shape=(n, n))

    def stiffness(self, C: np.ndarray) -> sp.csr_matrix:
        """K[i, j] = int grad(phi_i) . C grad(phi_j)."""
        G = self.data.p2_grad
        CG = np.einsum("tqkl,tqjl->tqjk", C, G)
        local = np.einsum("tq,tqik,tqjk->tij", self.weights, G, CG)
        return self._p2_matrix(local)

    def mass(self, c) -> sp.csr_matrix:
        wc = self.weights * np.broadcast_to(c, self.weights.shape)
        local = np.einsum("tq,qi,qj->tij", wc, self.data.p2, self.data.p2)
        return self._p2_matrix(local)

    def divergence(self, M: np.ndarray) -> sp.csr_matrix:
        """B with B[pi, v] = -int pi * sum_{c,k} d_k v_c M[c, k], shape (np, 2 nodes)."""
        n = self.space.n_nodes
        nt = self.dofs.shape[0]
        blocks = []
        for c in range(2):
            GM = np.einsum("tqjk,tqk->tqj", self.data.p2_grad, M[..., c, :])
            local = -np.einsum("tq,qi,tqj->tij", self.weights, self.data.p1, GM)
            rows = np.broadcast_to(self.pdofs[:, :, None], (nt, 3, 6)).ravel()
            cols = np.broadcast_to(self.dofs[:, None, :], (nt, 3, 6)).ravel()
            blocks.append(sp.csr_matrix((local.ravel(), (rows, cols)),
                                        shape=(self.space.n_pressure, n)))
        return sp.hstack(blocks, format="csr")

    def p1_mass(self) -> sp.csr_matrix:
        nt = self.pdofs.shape[0]
        local = np.einsum("tq,qi,qj->tij", self.weights, self.data.p1, self.data.p1)
        rows = np.broadcast_to(self.pdofs[:, :, None], (nt, 3, 3)).ravel()
        cols = np.broadcast_to(self.pdofs[:, None, :], (nt, 3, 3)).ravel()
        npr = self.space.n_pressure
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(npr, npr))

    # -- vectors ----------------------------------------------------------------
    def _scatter(self, dofs: np.ndarray, local: np.ndarray, size: int) -> np.ndarray:
        return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=size)

    def load_grad(self, F: np.ndarray) -> np.ndarray:
        """r[i] = int F . grad(phi_i) for F of shape (nt, nq, 2)."""
        local = np.einsum("tq,tqk,tqik->ti", self.weights, F, self.data.p2_grad)
        return self._scatter(self.dofs, local, self.space.n_nodes)

    def load_value(self, f: np.ndarray) -> np.ndarray:
        """r[i] = int f phi_i for f of shape (nt, nq)."""
        local = np.einsum("tq,qi->ti", self.weights * f, self.data.p2)
        return self._scatter(self.dofs, local, self.space.n_nodes)

    def load_p1(self, g: np.ndarray) -> np.ndarray:
        local = np.einsum("tq,qi->ti", self.weights * g, self.data.p1)
        return self._scatter(self.pdofs, local, self.space.n_pressure)

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.weights * f))

    # -- boundary ---------------------------------------------------------------
    def boundary_rule(self, tag: int, n_points: int = 3) -> "BoundaryRule":
        return boundary_rule(self.space, tag, n_points)


@dataclass(frozen=True)
class BoundaryRule:
    """Gauss points on the edges of one boundary side with adjacent-element basis data."""

    edges: np.ndarray
    elements: np.ndarray     # (ne,)
    points: np.ndarray       # (ne, nq, 2)
    weights: np.ndarray      # (ne, nq), includes edge length
    p2: np.ndarray           # (ne, nq, 6)
    p2_grad: np.ndarray      # (ne, nq, 6, 2)
    dofs: np.ndarray         # (ne, 6)


def boundary_rule(space: TaylorHoodSpace, tag: int, n_points: int = 3) -> BoundaryRule:
    cache = space.__dict__.setdefault("_boundary_cache", {})
    key = (tag, n_points)
    if key in cache:
        return cache[key]
    m = space.mesh
    edges = m.boundary_edges(tag)
    a = m.vertices[m.edges[edges, 0]]
    b = m.vertices[m.edges[edges, 1]]
    t, w = line_rule(n_points)
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    # edges sorted along the side, so traces come out ordered
    order = np.argsort(pts[:, 0, 0] + pts[:, 0, 1])
    edges, pts, length = edges[order], pts[order], length[order]
    elements = m.edge_triangle[edges]
    el = np.broadcast_to(elements[:, None], pts.shape[:2])
    vals, grads = space.basis_at(el, pts)
    rule = BoundaryRule(edges=edges, elements=elements, points=pts,
                        weights=length[:, None] * w[None, :], p2=vals, p2_grad=grads,
                        dofs=space.p2_dofs[elements])
    cache[key] = rule
    return rule


def boundary_load(space: TaylorHoodSpace, tag: int, g: np.ndarray, n_points: int = 3) -> np.ndarray:
    """r[i] = int_side g phi_i for g sampled at the side's Gauss points (ne, nq)."""
    rule = boundary_rule(space, tag, n_points)
    local = np.einsum("eq,eqi->ei", rule.weights * g, rule.p2)
    return np.bincount(rule.dofs.ravel(), weights=local.ravel(), minlength=space.n_nodes)


@dataclass(frozen=True)
class SaddleSystem:
    """Full (unreduced) block system [[A, B^T], [B, 0]] with right-hand sides f, g."""

    space: TaylorHoodSpace
    A: sp.csr_matrix
    B: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, self.g])


@dataclass
class QuadratureContext:
    """What a kernel sees: reference coordinates and the assembler."""

    x: np.ndarray
    y: np.ndarray
    assembler: Assembler


def assemble(space: TaylorHoodSpace,
             bilinear_kernel: Callable[[QuadratureContext], tuple],
             linear_kernel: Callable[[QuadratureContext], np.ndarray] | None = None,
             degree: int = 4) -> SaddleSystem:
    """Assemble a generalized Stokes system from pointwise kernels.

    ``bilinear_kernel(ctx)`` returns ``(reaction, diffusion, divergence)``:
    a scalar field (nt, nq), a tensor field (nt, nq, 2, 2) acting as
    ``tr(grad u C grad v^T)``, and a tensor field M for ``-int pi tr(grad v M^T)``.
    ``linear_kernel(ctx)`` returns a body force (nt, nq, 2).
    """
    asm = Assembler(space, degree)
    ctx = QuadratureContext(asm.x, asm.y, asm)
    reaction, diffusion, divergence = bilinear_kernel(ctx)
    K = asm.stiffness(diffusion) + asm.mass(reaction)
    A = sp.block_diag([K, K], format="csr")
    B = asm.divergence(divergence)
    f = np.zeros(space.n_velocity)
    if linear_kernel is not None:
        force = linear_kernel(ctx)
        f = np.concatenate([asm.load_value(force[..., 0]), asm.load_value(force[..., 1])])
    return SaddleSystem(space, A, B, f, np.zeros(space.n_pressure))
