"""Sparse direct solution of the Taylor-Hood saddle-point system."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem
from .space import TaylorHoodSpace

RESIDUAL_TOL = 1e-10
KRYLOV_RTOL = 1e-13
KRYLOV_MAXITER = 40


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MixedField:
    """Velocity/pressure coefficient pair on a Taylor-Hood space."""

    space: TaylorHoodSpace
    velocity: np.ndarray
    pressure: np.ndarray

    @classmethod
    def from_vector(cls, space: TaylorHoodSpace, vec: np.ndarray) -> "MixedField":
        return cls(space, vec[:space.n_velocity].copy(), vec[space.n_velocity:].copy())

    @classmethod
    def zeros(cls, space: TaylorHoodSpace) -> "MixedField":
        return cls(space, np.zeros(space.n_velocity), np.zeros(space.n_pressure))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.velocity, self.pressure])

    def __add__(self, other: "MixedField") -> "MixedField":
        return MixedField(self.space, self.velocity + other.velocity, self.pressure + other.pressure)

    def __sub__(self, other: "MixedField") -> "MixedField":
        return MixedField(self.space, self.velocity - other.velocity, self.pressure - other.pressure)

    def __mul__(self, s: float) -> "MixedField":
        return MixedField(self.space, s * self.velocity, s * self.pressure)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass
class SolveDiagnostics:
    residual: float
    n_free: int
    nnz_factor: int
    refinements: int = 0
    krylov_iterations: int = 0


@dataclass(eq=False)
class SaddleFactorization:
    """LU factorization of the reduced (free-dof) saddle matrix, reusable across right-hand sides.

    With ``borrowed=True`` the LU factors belong to a nearby matrix on the
    same space and serve as a GMRES preconditioner.  Should GMRES stall, the
    matrix is factorized afresh and the solve repeated.
    """

    space: TaylorHoodSpace
    matrix: sp.csr_matrix
    free: np.ndarray
    lu: object = field(repr=False)
    fixed: np.ndarray = field(repr=False)
    K_ff: sp.csc_matrix = field(repr=False)
    K_fd: sp.csr_matrix = field(repr=False)
    borrowed: bool = False

    @classmethod
    def build(cls, system: SaddleSystem, reuse: "SaddleFactorization | None" = None) -> "SaddleFactorization":
        space = system.space
        K = system.matrix()
        free = space.free_dofs
        fixed = np.setdiff1d(np.arange(space.n_dofs), free)
        K_ff = K[free][:, free].tocsc()
        K_fd = K[free][:, fixed].tocsr()
        if reuse is not None and reuse.space is space:
            return cls(space, K, free, reuse.lu, fixed, K_ff, K_fd, borrowed=True)
        return cls(space, K, free, _factorize(K_ff), fixed, K_ff, K_fd)

    def refactorize(self) -> None:
        self.lu = _factorize(self.K_ff)
        self.borrowed = False

    def _relres(self, x: np.ndarray, b: np.ndarray) -> float:
        norm_b = np.linalg.norm(b)
        return float(np.linalg.norm(self.K_ff @ x - b) / (norm_b if norm_b > 0 else 1.0))

    def _krylov(self, b: np.ndarray):
        count = [0]

        def tick(_):
            count[0] += 1

        M = spla.LinearOperator(self.K_ff.shape, matvec=self.lu.solve, dtype=float)
        x, _ = spla.gmres(self.K_ff, b, x0=self.lu.solve(b), M=M, rtol=KRYLOV_RTOL, atol=0.0,
                          restart=KRYLOV_MAXITER, maxiter=1, callback=tick, callback_type="pr_norm")
        return x, count[0]

    def _direct(self, b: np.ndarray):
        x = self.lu.solve(b)
        res = self._relres(x, b)
        refinements = 0
        while res > RESIDUAL_TOL and refinements < 3:
            x = x + self.lu.solve(b - self.K_ff @ x)
            res = self._relres(x, b)
            refinements += 1
        return x, res, refinements

    def solve(self, rhs: np.ndarray, dirichlet: np.ndarray | None = None):
        """Solve with full-length ``rhs``; ``dirichlet`` gives values of constrained velocity dofs."""
        space = self.space
        full_fixed = np.zeros(self.fixed.size)
        if dirichlet is not None:
            full_fixed = np.concatenate([dirichlet, np.zeros(space.n_pressure)])[self.fixed]
        b = rhs[self.free] - self.K_fd @ full_fixed
        iterations = refinements = 0
        if self.borrowed:
            x, iterations = self._krylov(b)
            res = self._relres(x, b)
            if not np.isfinite(res) or res > RESIDUAL_TOL:
                self.refactorize()
        if not self.borrowed:
            x, res, refinements = self._direct(b)
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            raise SingularSystemError(f"saddle solve residual {res:.3e} above tolerance")
        out = np.zeros(space.n_dofs)
        out[self.free] = x
        out[self.fixed] = full_fixed
        diag = SolveDiagnostics(residual=res, n_free=self.free.size,
                                nnz_factor=int(self.lu.L.nnz + self.lu.U.nnz), refinements=refinements,
                                krylov_iterations=iterations)
        return MixedField.from_vector(space, out), diag


def _factorize(K_ff: sp.csc_matrix):
    try:
        return spla.splu(K_ff)
    except RuntimeError as exc:
        raise SingularSystemError(f"saddle factorization failed: {exc}") from exc


def solve_saddle(system: SaddleSystem, dirichlet: np.ndarray | None = None):
    """Factorize and solve; returns (field, factorization, diagnostics)."""
    fact = SaddleFactorization.build(system)
    field_, diag = fact.solve(system.rhs(), dirichlet)
    return field_, fact, diag
