"""First and second shape sensitivities of the discrete solution operator.

The mesh never moves, so differentiating the discrete state equation in q
gives saddle systems with the state matrix and "dotted" right-hand sides.
The lifting does not depend on q, so the sensitivities vanish on all
Dirichlet dofs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import MixedField
from .forms import (a_ddot, a_dot, b_dot_pressure_tests, b_dot_velocity_tests, f_ddot, f_dot)
from .state import StateSolution


@dataclass(eq=False)
class SensitivitySolution:
    field: MixedField
    direction: object
    second_direction: object = None

    @property
    def du(self) -> np.ndarray:
        return self.field.velocity

    @property
    def dp(self) -> np.ndarray:
        return self.field.pressure


def _solve(state: StateSolution, rhs_v: np.ndarray, rhs_p: np.ndarray) -> MixedField:
    field, _ = state.factorization.solve(np.concatenate([rhs_v, rhs_p]))
    return field


def solve_sensitivity(state: StateSolution, dq) -> SensitivitySolution:
    """(du, dp) = S'(q)(dq)."""
    pb = state.pullback
    var = pb.variation(dq)
    rhs_v = f_dot(pb, var) - a_dot(pb, var, state.u) - b_dot_velocity_tests(pb, var, state.p)
    rhs_p = -b_dot_pressure_tests(pb, var, state.u)
    return SensitivitySolution(_solve(state, rhs_v, rhs_p), dq)


def solve_second_sensitivity(state: StateSolution, sens_d: SensitivitySolution,
                             sens_t: SensitivitySolution) -> SensitivitySolution:
    """S''(q)(dq, tq) from the two first sensitivities (b is affine in q)."""
    pb = state.pullback
    dq, tq = sens_d.direction, sens_t.direction
    var_d, var_t = pb.variation(dq), pb.variation(tq)
    var_dt = pb.second_variation(dq, tq)
    rhs_v = (f_ddot(pb, var_d, var_t) - a_ddot(pb, var_d, var_t, var_dt, state.u)
             - a_dot(pb, var_d, sens_t.du) - b_dot_velocity_tests(pb, var_d, sens_t.dp)
             - a_dot(pb, var_t, sens_d.du) - b_dot_velocity_tests(pb, var_t, sens_d.dp))
    rhs_p = -b_dot_pressure_tests(pb, var_d, sens_t.du) - b_dot_pressure_tests(pb, var_t, sens_d.du)
    return SensitivitySolution(_solve(state, rhs_v, rhs_p), dq, tq)
