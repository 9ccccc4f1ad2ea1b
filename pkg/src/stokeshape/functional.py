"""Cost functionals, their derivatives and L2(I) gradient densities.

Three routes to the first derivative are provided:

* ``hadamard``: boundary density built from traces of grad u and grad z on
  the wall (continuous shape-derivative formula, exact only as h -> 0);
* ``volumetric``: differentiates the discrete functional using the state
  sensitivity du (one extra solve per direction);
* ``adjoint``: the same discrete derivative, rewritten with the adjoint so
  that all directions come from one adjoint solve.

The last two agree with finite differences of the discrete functional up to
rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .adjoint import AdjointSolution, tracking_residual
from .control import (ControlFunction, ControlGrid, as_control_function, curvature_norm_sq,
                      gauss_points, integrate, p1_mass_matrix, perimeter, second_difference)
from .fem import GAMMA0, boundary_rule
from .forms import _evaluate, a_dot_coefficients, apply_reaction_diffusion, f_dot_field
from .geometry import first_variation_from_values, quantities_from_values
from .sensitivity import SensitivitySolution
from .state import StateSolution

VARIANTS = ("curvatureEnergy", "perimeterEnergy", "perimeterTracking")
TOGGLES = ("asWritten", "gradientCorrected")
ROUTES = ("hadamard", "adjoint")

# resolution used on I when a control carries no grid of its own
_ANALYTIC_CELLS = 512


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """Which functional, with its weights.

    ``target`` is a reference-domain velocity coefficient vector (tracking
    only).  ``toggle`` selects the reading of the boundary density factor.
    """

    variant: str = "perimeterEnergy"
    alpha: float = 0.0
    beta: float = 0.0
    vbar: float = 0.0
    target: np.ndarray | None = field(default=None, repr=False)
    toggle: str = "gradientCorrected"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown functional variant {self.variant!r}; choose from {VARIANTS}")
        if self.toggle not in TOGGLES:
            raise ValueError(f"unknown gradient toggle {self.toggle!r}; choose from {TOGGLES}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if (self.target is not None) != self.tracking:
            raise ValueError("a target velocity is required for, and only for, the tracking variant")

    @property
    def tracking(self) -> bool:
        return self.variant == "perimeterTracking"

    @property
    def reg_weight(self) -> float:
        """Coefficient in front of the regularization term."""
        return 0.5 * self.alpha if self.tracking else self.alpha


@dataclass(frozen=True)
class FunctionalValue:
    energy: float
    reg: float
    vol: float

    @property
    def total(self) -> float:
        return self.energy + self.reg + self.vol


@dataclass(frozen=True)
class GradientDensity:
    """P1 function on a control grid representing j'(q) in L2(I).

    The values are the L2 projection of the derivative onto all hat
    functions, end nodes included.  The end values are generally nonzero
    and couple to interior hats through the mass matrix, so evaluation goes
    through :meth:`eval` rather than a (clamped) control.
    """

    grid: ControlGrid
    values: np.ndarray
    route: str = "hadamard"

    def eval(self, x) -> np.ndarray:
        return np.interp(x, self.grid.nodes, self.values)

    def as_control(self) -> ControlFunction:
        """The density as a control (end values clamped to zero)."""
        return ControlFunction(self.grid, self.values)

    def pair(self, dq) -> float:
        """(density, dq) in L2(I)."""
        x, w = gauss_points(self.grid, 5)
        return float(np.dot(w, self.eval(x) * dq.eval(x)))


# -- helpers on I -------------------------------------------------------------

def _interval_rule(*controls):
    grids = [c.grid for c in controls if isinstance(c, ControlFunction)]
    if not grids:
        return gauss_points(ControlGrid.uniform(_ANALYTIC_CELLS), 5)
    nodes = np.unique(np.concatenate([g.nodes for g in grids]))
    return gauss_points(ControlGrid(nodes), 5)


def _hat_scatter(grid: ControlGrid, x: np.ndarray, c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
    """g_i = sum over samples of c0 phi_i(x) + c1 phi_i'(x) for the P1 hat basis."""
    x, c0, c1 = (np.ravel(a) for a in np.broadcast_arrays(x, c0, c1))
    nodes = grid.nodes
    k = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    h = nodes[k + 1] - nodes[k]
    t = (x - nodes[k]) / h
    left = c0 * (1.0 - t) - c1 / h
    right = c0 * t + c1 / h
    return (np.bincount(k, weights=left, minlength=nodes.size)
            + np.bincount(k + 1, weights=right, minlength=nodes.size))


def _riesz_density(grid: ControlGrid, g: np.ndarray) -> np.ndarray:
    """L2(I) projection onto the P1 space of a dual vector on the hat basis."""
    return spla.spsolve(p1_mass_matrix(grid).tocsc(), g)


def area(q) -> float:
    if isinstance(q, ControlFunction):
        return integrate(q)
    return integrate(q, ControlGrid.uniform(_ANALYTIC_CELLS))


def _regularization(q, spec: FunctionalSpec) -> float:
    if spec.alpha == 0.0:
        return 0.0
    if spec.variant == "curvatureEnergy":
        return spec.alpha * curvature_norm_sq(q, None if isinstance(q, ControlFunction)
                                              else ControlGrid.uniform(_ANALYTIC_CELLS))
    grid = None if isinstance(q, ControlFunction) else ControlGrid.uniform(_ANALYTIC_CELLS)
    return spec.reg_weight * perimeter(q, grid)


def _reg_first(q, dq, spec: FunctionalSpec) -> float:
    if spec.alpha == 0.0:
        return 0.0
    if spec.variant == "curvatureEnergy":
        return 2.0 * spec.alpha * _curvature_inner(q, dq)
    x, w = _interval_rule(q, dq)
    q1 = q.eval(x, 1)
    return spec.reg_weight * float(np.dot(w, q1 * dq.eval(x, 1) / np.sqrt(1.0 + q1 ** 2)))


def _reg_second(q, dq, tq, spec: FunctionalSpec) -> float:
    if spec.alpha == 0.0:
        return 0.0
    if spec.variant == "curvatureEnergy":
        return 2.0 * spec.alpha * _curvature_inner(as_control_like(dq, q), tq)
    x, w = _interval_rule(q, dq, tq)
    q1 = q.eval(x, 1)
    return spec.reg_weight * float(np.dot(w, dq.eval(x, 1) * tq.eval(x, 1) / (1.0 + q1 ** 2) ** 1.5))


def as_control_like(dq, q):
    if isinstance(q, ControlFunction):
        return as_control_function(dq, q.grid, q.degree)
    return dq


def _curvature_inner(q, dq) -> float:
    """(q'', dq'') with difference quotients for P1 controls."""
    if isinstance(q, ControlFunction) and q.degree == 1:
        dq = as_control_function(dq, q.grid)
        d2q, w = second_difference(q)
        d2d, _ = second_difference(dq)
        return float(np.dot(w, d2q * d2d))
    x, w = _interval_rule(q)
    return float(np.dot(w, q.eval(x, 2) * dq.eval(x, 2)))


def _volume(q, spec: FunctionalSpec) -> tuple[float, float]:
    """(penalty value, its derivative factor 2 beta (area - vbar))."""
    if spec.beta == 0.0:
        return 0.0, 0.0
    gap = area(q) - spec.vbar
    return spec.beta * gap ** 2, 2.0 * spec.beta * gap


# -- values -------------------------------------------------------------------

def energy_term(state: StateSolution, spec: FunctionalSpec) -> float:
    pb = state.pullback
    w = tracking_residual(state, spec.target)
    _, gw = pb.asm.velocity(w)
    return pb.asm.integrate(np.einsum("tqck,tqkl,tqcl->tq", gw, pb.maps.A, gw))


def eval_functional(state: StateSolution, spec: FunctionalSpec) -> FunctionalValue:
    q = state.control
    return FunctionalValue(energy=energy_term(state, spec), reg=_regularization(q, spec),
                           vol=_volume(q, spec)[0])


# -- boundary density ---------------------------------------------------------

@dataclass(frozen=True)
class WallTrace:
    x: np.ndarray        # (ne, nq) abscissae of the wall quadrature points
    weights: np.ndarray  # (ne, nq)
    psi: np.ndarray      # (ne, nq) boundary density


def _wall_gradients(rule, space, vec: np.ndarray) -> np.ndarray:
    n = space.n_nodes
    gx = np.einsum("ei,eqik->eqk", vec[:n][rule.dofs], rule.p2_grad)
    gy = np.einsum("ei,eqik->eqk", vec[n:][rule.dofs], rule.p2_grad)
    return np.stack([gx, gy], -2)


def _wall_flux(rule, space, residual: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Consistent boundary flux from a residual vector over P2 nodes.

    Solves for the wall trace T (per unit dx, scaled by 1/weight) with
    int T phi_i dx = residual_i at the wall nodes and returns T at the rule
    points.  The residual at the corner shared with the inflow side also
    carries the unknown inflow traction, so that node is left out of the
    solve and its value is extrapolated linearly from its two neighbours.
    """
    n = space.n_nodes
    wall = space.boundary_nodes(GAMMA0)
    shared = np.intersect1d(wall, space.boundary_nodes(space.layout.tags["inflow"]))
    keep = np.setdiff1d(wall, shared)
    local = np.einsum("eq,eqi,eqj->eij", rule.weights * weight, rule.p2, rule.p2)
    rows = np.broadcast_to(rule.dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(rule.dofs[:, None, :], local.shape).ravel()
    M = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))[keep][:, keep]
    coeff = np.zeros(n)
    coeff[keep] = spla.spsolve(M.tocsc(), residual[keep])
    xs = space.node_coords[:, 0]
    for c in shared:
        a, b = keep[np.argsort(np.abs(xs[keep] - xs[c]))[:2]]
        coeff[c] = coeff[a] + (coeff[b] - coeff[a]) * (xs[c] - xs[a]) / (xs[b] - xs[a])
    return np.einsum("ei,eqi->eq", coeff[rule.dofs], rule.p2)


def hadamard_trace(state: StateSolution, adjoint: AdjointSolution, spec: FunctionalSpec,
                   n_points: int = 4, trace: str = "flux") -> WallTrace:
    """Boundary density Psi at Gauss points on the wall.

    With the unit normal n of the physical wall and physical gradients
    grad(.) DT^{-1}, the corrected reading is
    Psi = -(grad w n) . (nu grad z n - grad w n); the literal reading keeps
    only the nu grad z factor and uses DT^{-1} DT^{-T} n.

    ``trace="direct"`` evaluates the gradients from the element adjacent to
    each wall point.  ``trace="flux"`` (energy functional, corrected reading)
    instead recovers the tangential tractions of the state and adjoint from
    their discrete residuals; since u = z = 0 on the wall and both are
    divergence free, d_n u and d_n z are tangential and fixed by them.
    """
    if adjoint.variant != ("tracking" if spec.tracking else "energy"):
        raise ValueError("adjoint was solved for a different functional variant")
    if trace not in ("flux", "direct"):
        raise ValueError("trace must be 'flux' or 'direct'")
    space = state.space
    q = state.control
    rule = boundary_rule(space, GAMMA0, n_points)
    x = rule.points[..., 0]
    q0, q1 = q.eval(x), q.eval(x, 1)
    nu = _evaluate(state.data.nu, x, q0)
    maps = quantities_from_values(q0, q1, np.zeros_like(x))
    normal = np.stack([q1, -np.ones_like(q1)], -1) / np.sqrt(1.0 + q1 ** 2)[..., None]
    if trace == "flux" and spec.toggle == "gradientCorrected":
        stretch = np.sqrt(1.0 + q1 ** 2)
        tangent = np.stack([np.ones_like(q1), q1], -1) / stretch[..., None]
        sysm = state.system
        pb = state.pullback
        w = tracking_residual(state, spec.target)
        zero = np.zeros_like(pb.maps.gamma)
        r_u = sysm.A @ state.u + sysm.B.T @ state.p - sysm.f
        r_z = (sysm.A @ adjoint.z + sysm.B.T @ adjoint.s
               - 2.0 * apply_reaction_diffusion(pb.asm, zero, pb.maps.A, w))
        n = space.n_nodes
        t_u = np.stack([_wall_flux(rule, space, r_u[c * n:(c + 1) * n], stretch) for c in range(2)], -1)
        t_z = np.stack([_wall_flux(rule, space, r_z[c * n:(c + 1) * n], stretch) for c in range(2)], -1)
        dw = (np.einsum("eqc,eqc->eq", t_u, tangent) / nu)[..., None] * tangent
        if spec.tracking:
            m = np.einsum("eqkl,eql->eqk", maps.DTinv, normal)
            dw = dw - np.einsum("eqck,eqk->eqc", _wall_gradients(rule, space, spec.target), m)
        # the adjoint flux is nu d_n z - s n - 2 d_n w, with d_n z tangential
        nu_dz = (np.einsum("eqc,eqc->eq", t_z, tangent)
                 + 2.0 * np.einsum("eqc,eqc->eq", dw, tangent))[..., None] * tangent
        psi = -np.einsum("eqc,eqc->eq", dw, nu_dz - dw)
        return WallTrace(x=x, weights=rule.weights, psi=psi)

    gw = _wall_gradients(rule, space, tracking_residual(state, spec.target))
    gz = _wall_gradients(rule, space, adjoint.z)
    if spec.toggle == "gradientCorrected":
        m = np.einsum("eqkl,eql->eqk", maps.DTinv, normal)
    else:
        m = np.einsum("eqkl,eqjl,eqj->eqk", maps.DTinv, maps.DTinv, normal)
    dw = np.einsum("eqck,eqk->eqc", gw, m)
    dz = np.einsum("eqck,eqk->eqc", gz, m)
    if spec.toggle == "gradientCorrected":
        psi = -np.einsum("eqc,eqc->eq", dw, nu[..., None] * dz - dw)
    else:
        psi = np.einsum("eqc,eqc->eq", dw, nu[..., None] * dz)
    return WallTrace(x=x, weights=rule.weights, psi=psi)


# -- pointwise shape integrand (adjoint route) ----------------------------------

def _shape_coefficients(state: StateSolution, adjoint: AdjointSolution, spec: FunctionalSpec):
    """c0, c1 at the volume quadrature points with j_E'(dq) = int c0 dq(x) + c1 dq'(x).

    Uses j_E' = (grad w A', grad w) + F'(z) - a'(u, z) - b'(z, p) - b'(u, s), which
    follows from the sensitivity equations tested with the adjoint.
    """
    pb = state.pullback
    asm = pb.asm
    u, gu = asm.velocity(state.u)
    z, gz = asm.velocity(adjoint.z)
    _, gw = asm.velocity(tracking_residual(state, spec.target))
    p = asm.pressure(state.p)
    s = asm.pressure(adjoint.s)
    out = []
    for d0, d1 in ((1.0, 0.0), (0.0, 1.0)):
        var = first_variation_from_values(pb.q0, pb.q1, d0, d1, asm.y)
        reaction, C = a_dot_coefficients(pb, var)
        val = np.einsum("tqck,tqkl,tqcl->tq", gw, var.A_dot, gw)
        val = val - reaction * np.einsum("tqc,tqc->tq", u, z) - np.einsum("tqck,tqkl,tqcl->tq", gu, C, gz)
        val = val + p * np.einsum("tqck,tqck->tq", gz, var.cof_DV) + s * np.einsum("tqck,tqck->tq", gu, var.cof_DV)
        fd = f_dot_field(pb, var)
        if fd is not None:
            val = val + np.einsum("ctq,tqc->tq", fd, z)
        out.append(asm.weights * val)
    return asm.x, out[0], out[1]


# -- directional derivatives ----------------------------------------------------

def hadamard_directional_derivative(state: StateSolution, adjoint: AdjointSolution,
                                    spec: FunctionalSpec, dq) -> float:
    """(Psi, dq) + regularization and volume terms."""
    tr = hadamard_trace(state, adjoint, spec)
    q = state.control
    dvol = _volume(q, spec)[1]
    return (float(np.sum(tr.weights * tr.psi * dq.eval(tr.x)))
            + _reg_first(q, dq, spec) + (dvol * area(dq) if dvol else 0.0))


def adjoint_directional_derivative(state: StateSolution, adjoint: AdjointSolution,
                                   spec: FunctionalSpec, dq) -> float:
    x, c0, c1 = _shape_coefficients(state, adjoint, spec)
    q = state.control
    dvol = _volume(q, spec)[1]
    return (float(np.sum(c0 * dq.eval(x) + c1 * dq.eval(x, 1)))
            + _reg_first(q, dq, spec) + (dvol * area(dq) if dvol else 0.0))


def eval_directional_derivative(state: StateSolution, sens: SensitivitySolution,
                                spec: FunctionalSpec) -> float:
    """Volumetric j'(q)(dq) = (grad w A', grad w) + 2 (grad du A, grad w) + reg + vol."""
    pb = state.pullback
    asm = pb.asm
    dq = sens.direction
    var = pb.variation(dq)
    _, gw = asm.velocity(tracking_residual(state, spec.target))
    _, gd = asm.velocity(sens.du)
    e = asm.integrate(np.einsum("tqck,tqkl,tqcl->tq", gw, var.A_dot, gw)
                      + 2.0 * np.einsum("tqck,tqkl,tqcl->tq", gd, pb.maps.A, gw))
    q = state.control
    dvol = _volume(q, spec)[1]
    return e + _reg_first(q, dq, spec) + (dvol * area(dq) if dvol else 0.0)


def eval_second_derivative(state: StateSolution, sens_d: SensitivitySolution, sens_t: SensitivitySolution,
                           sens2: SensitivitySolution, spec: FunctionalSpec) -> float:
    """j''(q)(dq, tq) from the first and second sensitivities."""
    pb = state.pullback
    asm = pb.asm
    dq, tq = sens_d.direction, sens_t.direction
    var_d, var_t = pb.variation(dq), pb.variation(tq)
    var_dt = pb.second_variation(dq, tq)
    _, gw = asm.velocity(tracking_residual(state, spec.target))
    _, gd = asm.velocity(sens_d.du)
    _, gt = asm.velocity(sens_t.du)
    _, g2 = asm.velocity(sens2.du)

    def form(a, M, b):
        return np.einsum("tqck,tqkl,tqcl->tq", a, M, b)

    A = pb.maps.A
    e = asm.integrate(form(gw, var_dt.A_ddot, gw) + 2.0 * form(gt, var_d.A_dot, gw)
                      + 2.0 * form(gd, var_t.A_dot, gw) + 2.0 * form(gd, A, gt) + 2.0 * form(g2, A, gw))
    q = state.control
    vol = 2.0 * spec.beta * area(dq) * area(tq) if spec.beta else 0.0
    return e + _reg_second(q, dq, tq, spec) + vol


# -- gradient density -------------------------------------------------------------

def default_route(spec: FunctionalSpec) -> str:
    """Boundary density for the energy variants; adjoint route for tracking.

    The tracking target is a fixed reference-domain field, so it moves with
    the map and its transport adds a volume term the boundary formula lacks.
    """
    return "adjoint" if spec.tracking else "hadamard"


def gradient_vector(state: StateSolution, adjoint: AdjointSolution, spec: FunctionalSpec,
                    grid: ControlGrid, route: str = "hadamard") -> np.ndarray:
    """g_i = j'(q)(phi_i) over the P1 hat basis of ``grid`` (curvature term excluded)."""
    if route not in ROUTES:
        raise ValueError(f"unknown gradient route {route!r}; choose from {ROUTES}")
    q = state.control
    if route == "hadamard":
        tr = hadamard_trace(state, adjoint, spec)
        g = _hat_scatter(grid, tr.x, tr.weights * tr.psi, 0.0)
    else:
        x, c0, c1 = _shape_coefficients(state, adjoint, spec)
        g = _hat_scatter(grid, x, c0, c1)
    xs, ws = gauss_points(grid, 5)
    dvol = _volume(q, spec)[1]
    if dvol:
        g = g + _hat_scatter(grid, xs, dvol * ws, 0.0)
    if spec.alpha and spec.variant != "curvatureEnergy":
        q1 = q.eval(xs, 1)
        g = g + _hat_scatter(grid, xs, 0.0, spec.reg_weight * ws * q1 / np.sqrt(1.0 + q1 ** 2))
    return g


def eval_gradient_density(state: StateSolution, adjoint: AdjointSolution, spec: FunctionalSpec,
                          grid: ControlGrid | None = None, route: str = "hadamard") -> GradientDensity:
    """L2(I) gradient density on the control grid.

    For the curvature variant the alpha term is left out, as its L2
    representative would need q'''' (it enters through the directional
    derivative instead).
    """
    if grid is None:
        q = state.control
        if not isinstance(q, ControlFunction):
            raise ValueError("a control grid is needed for analytic controls")
        grid = q.grid
    g = gradient_vector(state, adjoint, spec, grid, route)
    return GradientDensity(grid, _riesz_density(grid, g), route)
