"""Pulled-back Stokes forms a(q), b(q), F(q) and their control derivatives.

All "apply" functions return the action of a form on every basis function,
i.e. the vector ``r[i] = form(field, phi_i)``, laid out like the velocity
(component-blocked) or pressure coefficient vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .fem import Assembler, TaylorHoodSpace, boundary_load, boundary_rule
from .geometry import first_variation_from_values, quantities_from_values, second_variation_from_values

Field = Union[float, Callable]


class MissingDataDerivative(ValueError):
    """A non-constant datum was given without the y-derivative needed by a variation."""


def _evaluate(value, X, Y, components: int | None = None) -> np.ndarray:
    if value is None:
        shape = X.shape if components is None else (components,) + X.shape
        return np.zeros(shape)
    if callable(value):
        out = np.asarray(value(X, Y), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
        if components is not None and out.ndim == 1:
            out = out.reshape((components,) + (1,) * X.ndim)
    shape = X.shape if components is None else (components,) + X.shape
    return np.broadcast_to(out, shape)


@dataclass(frozen=True)
class ProblemData:
    """Coefficients and boundary data of the generalized Stokes problem.

    ``eta``, ``nu`` are scalars or callables ``(X, Y) -> array`` in physical
    coordinates; ``f`` returns an array of shape (2, ...).  ``gD`` and ``gN``
    take the coordinate along their side and return shape (2, ...).  For
    non-constant data the physical y-derivatives (``*_dy``, ``*_dyy``) are
    required by the shape-sensitivity forms, since the map only moves points
    vertically.
    """

    eta: Field = 0.0
    nu: Field = 1.0
    f: Field | None = None
    gD: Callable | None = None
    gN: Callable | None = None
    eta_dy: Callable | None = None
    eta_dyy: Callable | None = None
    nu_dy: Callable | None = None
    nu_dyy: Callable | None = None
    f_dy: Callable | None = None
    f_dyy: Callable | None = None
    name: str = "custom"

    def derivative(self, which: str, order: int):
        base = getattr(self, which)
        if base is None or not callable(base):
            return None
        deriv = getattr(self, f"{which}_{'dy' if order == 1 else 'dyy'}")
        if deriv is None:
            raise MissingDataDerivative(f"{which} is non-constant but {which}_{'dy' * order} is missing")
        return deriv

    def check(self, X, Y, nu0: float = 0.0) -> None:
        nu = _evaluate(self.nu, X, Y)
        if np.any(nu <= nu0):
            raise ValueError("viscosity must stay positive")
        if np.any(_evaluate(self.eta, X, Y) < 0):
            raise ValueError("reaction coefficient must be non-negative")


def parabolic_inflow(y):
    y = np.asarray(y, dtype=float)
    return np.stack([y * (2.0 - y), np.zeros_like(y)])


def default_data() -> ProblemData:
    """nu = 1, eta = 0, f = 0, gN = 0 and a parabolic inflow peaking on the symmetry side."""
    return ProblemData(eta=0.0, nu=1.0, f=None, gD=parabolic_inflow, gN=None, name="default")


class Pullback:
    """Map quantities and composed data at the quadrature points of an assembler."""

    def __init__(self, control, data: ProblemData, assembler: Assembler):
        self.control = control
        self.data = data
        self.asm = assembler
        x, y = assembler.x, assembler.y
        self.q0 = control.eval(x)
        self.q1 = control.eval(x, 1)
        self.s = 1.0 - y
        self.maps = quantities_from_values(self.q0, self.q1, y)
        self.X = x
        self.Y = y + self.s * self.q0

    @cached_property
    def eta(self):
        return _evaluate(self.data.eta, self.X, self.Y)

    @cached_property
    def nu(self):
        return _evaluate(self.data.nu, self.X, self.Y)

    @cached_property
    def f(self):
        return _evaluate(self.data.f, self.X, self.Y, components=2)

    def d(self, which: str, order: int) -> np.ndarray:
        fn = self.data.derivative(which, order)
        comps = 2 if which == "f" else None
        return _evaluate(fn, self.X, self.Y, components=comps)

    def variation(self, dq):
        x = self.asm.x
        return first_variation_from_values(self.q0, self.q1, dq.eval(x), dq.eval(x, 1), self.asm.y)

    def second_variation(self, dq, tq):
        x = self.asm.x
        return second_variation_from_values(self.q0, self.q1, dq.eval(x), dq.eval(x, 1),
                                            tq.eval(x), tq.eval(x, 1), self.asm.y)


# -- state forms --------------------------------------------------------------

def state_blocks(pb: Pullback):
    """(A, B) blocks of a(q) and b(q)."""
    asm = pb.asm
    C = pb.nu[..., None, None] * pb.maps.A
    K = asm.stiffness(C) + asm.mass(pb.eta * pb.maps.gamma)
    A = sp.block_diag([K, K], format="csr")
    B = asm.divergence(pb.maps.cof)
    return A, B


def body_force(pb: Pullback) -> np.ndarray:
    if pb.data.f is None:
        return np.zeros(pb.asm.space.n_velocity)
    g = pb.f * pb.maps.gamma
    return np.concatenate([pb.asm.load_value(g[0]), pb.asm.load_value(g[1])])


def neumann_load(space: TaylorHoodSpace, data: ProblemData) -> np.ndarray:
    out = np.zeros(space.n_velocity)
    if data.gN is None:
        return out
    tag = space.layout.tags["outflow"]
    rule = boundary_rule(space, tag)
    along = rule.points[..., 1] if space.layout.outflow in ("Gamma1", "Gamma3") else rule.points[..., 0]
    g = np.asarray(data.gN(along), dtype=float)
    if g.shape == (2,):
        g = g.reshape(2, 1, 1)
    g = np.broadcast_to(g, (2,) + along.shape)
    n = space.n_nodes
    out[:n] = boundary_load(space, tag, g[0])
    out[n:] = boundary_load(space, tag, g[1])
    return out


# -- helpers on fields --------------------------------------------------------

def apply_reaction_diffusion(asm: Assembler, reaction, C, u_vec) -> np.ndarray:
    """Vector of int reaction u.phi + tr(grad u C grad phi^T) over velocity tests."""
    u, gu = asm.velocity(u_vec)
    out = []
    for c in range(2):
        flux = np.einsum("tqkl,tql->tqk", C, gu[..., c, :])
        out.append(asm.load_value(reaction * u[..., c]) + asm.load_grad(flux))
    return np.concatenate(out)


def _apply_b_to_pressure(asm: Assembler, M, p_vec) -> np.ndarray:
    """Vector of -int p grad(phi) : M over velocity tests."""
    p = asm.pressure(p_vec)
    return np.concatenate([asm.load_grad(-p[..., None] * M[..., c, :]) for c in range(2)])


def _apply_b_to_velocity(asm: Assembler, M, u_vec) -> np.ndarray:
    """Vector of -int psi grad(u) : M over pressure tests."""
    _, gu = asm.velocity(u_vec)
    return asm.load_p1(-np.einsum("tqck,tqck->tq", gu, M))


# -- first variations -----------------------------------------------------------

def a_dot_coefficients(pb: Pullback, var):
    """Reaction and diffusion coefficients of the first variation of a(q)."""
    vy = var.Vdq[..., 1]
    reaction = pb.eta * var.gamma_dot
    C = pb.nu[..., None, None] * var.A_dot
    if callable(pb.data.eta):
        reaction = reaction + pb.maps.gamma * pb.d("eta", 1) * vy
    if callable(pb.data.nu):
        C = C + (pb.d("nu", 1) * vy)[..., None, None] * pb.maps.A
    return reaction, C


def a_dot(pb: Pullback, var, u_vec) -> np.ndarray:
    return apply_reaction_diffusion(pb.asm, *a_dot_coefficients(pb, var), u_vec)


def b_dot_velocity_tests(pb: Pullback, var, p_vec) -> np.ndarray:
    return _apply_b_to_pressure(pb.asm, var.cof_DV, p_vec)


def b_dot_pressure_tests(pb: Pullback, var, u_vec) -> np.ndarray:
    return _apply_b_to_velocity(pb.asm, var.cof_DV, u_vec)


def f_dot_field(pb: Pullback, var) -> np.ndarray | None:
    """Pointwise first variation of the pulled-back body force, shape (2, nt, nq)."""
    if pb.data.f is None:
        return None
    g = pb.f * var.gamma_dot
    if callable(pb.data.f):
        g = g + pb.maps.gamma * pb.d("f", 1) * var.Vdq[..., 1]
    return g


def f_dot(pb: Pullback, var) -> np.ndarray:
    g = f_dot_field(pb, var)
    if g is None:
        return np.zeros(pb.asm.space.n_velocity)
    return np.concatenate([pb.asm.load_value(g[0]), pb.asm.load_value(g[1])])


# -- second variations ----------------------------------------------------------

def a_ddot(pb: Pullback, var_d, var_t, var_dt, u_vec) -> np.ndarray:
    vd, vt = var_d.Vdq[..., 1], var_t.Vdq[..., 1]
    reaction = pb.eta * var_dt.gamma_ddot
    C = pb.nu[..., None, None] * var_dt.A_ddot
    if callable(pb.data.eta):
        e1, e2 = pb.d("eta", 1), pb.d("eta", 2)
        reaction = reaction + pb.maps.gamma * e2 * vd * vt + e1 * (vd * var_t.gamma_dot + vt * var_d.gamma_dot)
    if callable(pb.data.nu):
        n1, n2 = pb.d("nu", 1), pb.d("nu", 2)
        C = (C + (n2 * vd * vt)[..., None, None] * pb.maps.A
             + (n1 * vd)[..., None, None] * var_t.A_dot + (n1 * vt)[..., None, None] * var_d.A_dot)
    return apply_reaction_diffusion(pb.asm, reaction, C, u_vec)


def f_ddot(pb: Pullback, var_d, var_t) -> np.ndarray:
    if pb.data.f is None or not callable(pb.data.f):
        return np.zeros(pb.asm.space.n_velocity)
    vd, vt = var_d.Vdq[..., 1], var_t.Vdq[..., 1]
    g = (pb.maps.gamma * pb.d("f", 2) * vd * vt
         + pb.d("f", 1) * (vd * var_t.gamma_dot + vt * var_d.gamma_dot))
    return np.concatenate([pb.asm.load_value(g[0]), pb.asm.load_value(g[1])])
