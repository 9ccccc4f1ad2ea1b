"""Manufactured Stokes solutions on a physical domain Omega_q, for convergence checks.

The velocity is the curl of ``psi = (Y - q(x))**2 (1 - Y)**3 phi(x)``: it
vanishes on the wall Y = q(x), and at Y = 1 both u_y and d_Y u_x vanish, so
the symmetry side needs no extra data.  Inflow and outflow data are derived
from the exact fields, and the body force is computed symbolically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from .fem import Assembler
from .forms import ProblemData
from .geometry import map_quantities
from .state import StateSolution


@dataclass(frozen=True)
class ManufacturedProblem:
    data: ProblemData
    velocity: Callable      # (X, Y) -> (2, ...)
    velocity_grad: Callable  # (X, Y) -> (2, 2, ...), [c, k] = d u_c / d X_k
    pressure: Callable


def _broadcast(value, shape):
    if isinstance(value, (list, tuple)):
        return np.stack([_broadcast(v, shape) for v in value])
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


def _vectorize(fn):
    def wrapped(X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return _broadcast(fn(X, Y), np.broadcast_shapes(X.shape, Y.shape))
    return wrapped


def manufactured_problem(control_expr: str = "0", phi: str = "1", pressure: str = "cos(pi*x)*cos(pi*Y)",
                         nu: float = 1.0, eta: float = 0.0) -> ManufacturedProblem:
    """Build the data of a manufactured solution on the domain of ``control_expr``."""
    x, Y = sympy.symbols("x Y", real=True)
    q = sympy.sympify(control_expr, locals={"x": x})
    ph = sympy.sympify(phi, locals={"x": x})
    p = sympy.sympify(pressure, locals={"x": x, "Y": Y})
    psi = (Y - q) ** 2 * (1 - Y) ** 3 * ph
    u = [sympy.diff(psi, Y), -sympy.diff(psi, x)]
    grad = [[sympy.diff(uc, v) for v in (x, Y)] for uc in u]
    f = [sympy.simplify(-nu * (sympy.diff(uc, x, 2) + sympy.diff(uc, Y, 2)) + eta * uc + sympy.diff(p, v))
         for uc, v in zip(u, (x, Y))]
    f_dy = [sympy.diff(fc, Y) for fc in f]
    f_dyy = [sympy.diff(fc, Y, 2) for fc in f]
    # outflow traction nu du/dn - p n at x = 1 with n = (1, 0)
    gN = [nu * grad[0][0] - p, nu * grad[1][0]]

    def lam(exprs):
        return _vectorize(sympy.lambdify((x, Y), exprs, "numpy"))

    u_fn, f_fn, fdy_fn, fdyy_fn = lam(u), lam(f), lam(f_dy), lam(f_dyy)
    gN_fn = lam(gN)
    p_fn = lam(p)

    data = ProblemData(
        eta=eta, nu=nu, f=f_fn, f_dy=fdy_fn, f_dyy=fdyy_fn,
        gD=lambda y: u_fn(np.zeros_like(np.asarray(y, dtype=float)), y),
        gN=lambda y: gN_fn(np.ones_like(np.asarray(y, dtype=float)), y),
        name="manufactured",
    )
    return ManufacturedProblem(
        data=data, velocity=u_fn, velocity_grad=lam(grad),
        pressure=p_fn,
    )


def state_errors(sol: StateSolution, problem: ManufacturedProblem, degree: int = 6) -> tuple[float, float]:
    """H1-seminorm velocity error and L2 pressure error, both measured on Omega_q."""
    asm = Assembler(sol.space, degree)
    q = sol.control
    x, y = asm.x, asm.y
    Yp = y + (1.0 - y) * q.eval(x)
    maps = map_quantities(q, x, y)
    _, gu = asm.velocity(sol.u)
    # physical gradient of the discrete field: grad_ref u DT^{-1}
    gu_phys = np.einsum("tqck,tqkl->tqcl", gu, maps.DTinv)
    g_exact = np.moveaxis(problem.velocity_grad(x, Yp), (0, 1), (-2, -1))
    e_u = np.sum((gu_phys - g_exact) ** 2, axis=(-2, -1))
    e_p = (asm.pressure(sol.p) - problem.pressure(x, Yp)) ** 2
    return (float(np.sqrt(asm.integrate(e_u * maps.gamma))),
            float(np.sqrt(asm.integrate(e_p * maps.gamma))))
