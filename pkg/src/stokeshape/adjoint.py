"""Adjoint problem for the energy and tracking functionals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import MixedField, SingularSystemError
from .forms import apply_reaction_diffusion
from .state import DIVERGENCE_TOL, StateSolution


@dataclass(eq=False)
class AdjointSolution:
    field: MixedField
    variant: str   # "energy" or "tracking"

    @property
    def z(self) -> np.ndarray:
        return self.field.velocity

    @property
    def s(self) -> np.ndarray:
        return self.field.pressure


def tracking_residual(state: StateSolution, target: np.ndarray | None) -> np.ndarray:
    """w = u - u_d (or u itself without a target)."""
    if target is None:
        return state.u
    target = np.asarray(target, dtype=float)
    if target.shape != state.u.shape:
        raise ValueError("target velocity does not live on the state's space")
    return state.u - target


def solve_adjoint(state: StateSolution, target: np.ndarray | None = None) -> AdjointSolution:
    """Find (z, s), z = 0 on every Dirichlet part, with

    a(q)(v, z) + b(q)(v, s) = 2 int tr(grad w A_q grad v^T),   b(q)(z, pi) = 0,

    where w = u for the energy functional and w = u - u_d for tracking.
    The state's factorization is reused since a(q) is symmetric.
    """
    pb = state.pullback
    space = state.space
    w = tracking_residual(state, target)
    zero = np.zeros_like(pb.maps.gamma)
    rhs_v = 2.0 * apply_reaction_diffusion(pb.asm, zero, pb.maps.A, w)
    rhs = np.concatenate([rhs_v, np.zeros(space.n_pressure)])
    field, _ = state.factorization.solve(rhs)
    div = float(np.max(np.abs(state.system.B @ field.velocity))) / max(1.0, np.linalg.norm(field.velocity))
    if div > DIVERGENCE_TOL:
        raise SingularSystemError(f"adjoint divergence identity violated: {div:.3e}")
    return AdjointSolution(field=field, variant="energy" if target is None else "tracking")
