"""Projected gradient descent with step-halving backtracking."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .adjoint import solve_adjoint
from .control import (AdmissibilityParams, ControlFunction, ControlGrid, as_control_function,
                      check_admissible, gauss_points)
from .fem import GAMMA0, Assembler, TaylorHoodSpace, boundary_rule
from .forms import ProblemData
from .functional import (ROUTES, FunctionalSpec, FunctionalValue, GradientDensity, default_route,
                         eval_functional, eval_gradient_density)
from .geometry import DegenerateDomainError
from .state import StateSolution, solve_state

log = logging.getLogger(__name__)

# accepted states whose borrowed-LU solves needed more GMRES steps get their own LU
REFRESH_KRYLOV = 12


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the gradient iteration.

    ``gtol`` (projected-gradient L2 norm) is an opt-in extra stop test; the
    default 0 keeps only the step-size criterion.  ``route="auto"`` picks the
    gradient route from the functional variant.
    """

    spec: FunctionalSpec
    eps_hat: float = 0.1
    eps_min: float = 1e-8
    max_iters: int = 100
    gtol: float = 0.0
    route: str = "auto"
    degree: int = 4
    reuse_factorization: bool = True
    admissibility: AdmissibilityParams = field(default_factory=AdmissibilityParams)

    def __post_init__(self):
        if not 0.0 < self.eps_min < self.eps_hat:
            raise ValueError("need 0 < eps_min < eps_hat")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.route != "auto" and self.route not in ROUTES:
            raise ValueError(f"unknown gradient route {self.route!r}")

    @property
    def resolved_route(self) -> str:
        return default_route(self.spec) if self.route == "auto" else self.route


# -- projection onto admissible variations --------------------------------------

def _projection_factor(space: TaylorHoodSpace):
    cache = space.__dict__.setdefault("_projection_cache", {})
    if "lu" not in cache:
        asm = Assembler(space, 4)
        eye = np.broadcast_to(np.eye(2), asm.weights.shape + (2, 2))
        K = (asm.stiffness(eye) + asm.mass(1.0)).tocsr()
        tags = space.layout.tags
        fixed = np.unique(np.concatenate([space.boundary_nodes(tags[k])
                                          for k in ("inflow", "outflow", "symmetry")]))
        free = np.setdiff1d(np.arange(space.n_nodes), fixed)
        cache["lu"] = spla.splu(K[free][:, free].tocsc())
        cache["free"] = free
    return cache["lu"], cache["free"]


def _wall_values(space: TaylorHoodSpace, G: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Evaluate a P2 scalar field on the wall at abscissae ``xs``."""
    rule = boundary_rule(space, GAMMA0)
    starts = space.mesh.vertices[space.mesh.edges[rule.edges]][:, :, 0].min(axis=1)
    k = np.clip(np.searchsorted(starts, xs, side="right") - 1, 0, starts.size - 1)
    pts = np.column_stack([xs, np.zeros_like(xs)])
    vals, _ = space.basis_at(rule.elements[k], pts)
    return np.einsum("ki,ki->k", vals, G[rule.dofs[k]])


def project_gradient(density: GradientDensity, space: TaylorHoodSpace) -> ControlFunction:
    """Smooth the density into an admissible descent direction on the control grid.

    Solves int grad G . grad w + G w = int_wall density w over P2 scalars
    vanishing on the three other sides, then samples G on the wall at the
    control nodes.
    """
    lu, free = _projection_factor(space)
    rule = boundary_rule(space, GAMMA0)
    dens = density.eval(rule.points[..., 0])
    local = np.einsum("eq,eqi->ei", rule.weights * dens, rule.p2)
    rhs = np.bincount(rule.dofs.ravel(), weights=local.ravel(), minlength=space.n_nodes)
    G = np.zeros(space.n_nodes)
    G[free] = lu.solve(rhs[free])
    values = _wall_values(space, G, density.grid.nodes)
    return ControlFunction(density.grid, values)


# -- line search ------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    q: ControlFunction
    step: float          # the epsilon that produced q
    accepted: bool       # j(q) <= j(q_old)
    eps_final: float     # loop variable after the last halving
    trials: tuple[float, ...]
    value: float


def backtracking_step(q_old: ControlFunction, g: ControlFunction, j_old: float,
                      eval_j: Callable[[ControlFunction], float], eps_hat: float,
                      eps_min: float) -> StepResult:
    """Literal step-halving loop.

    q_new = q_old - eps_hat g; then, while j(q_new) > j(q_old) and eps > eps_min,
    q_new = q_old - eps g and eps <- eps / 2.  The first pass of the loop
    repeats the eps_hat trial, whose value is reused rather than recomputed.
    Endpoint values are reset to 0 on every trial.
    """
    cache: dict[float, float] = {}
    trials: list[float] = []

    def trial(eps: float):
        q_new = q_old - eps * g
        if q_new.values[0] != 0.0 or q_new.values[-1] != 0.0:
            v = q_new.values.copy()
            v[0] = v[-1] = 0.0
            q_new = q_new.with_values(v)
        trials.append(eps)
        if eps not in cache:
            cache[eps] = eval_j(q_new)
        return q_new, cache[eps]

    eps = eps_hat
    q_new, j_new = trial(eps_hat)
    used = eps_hat
    while j_new > j_old and eps > eps_min:
        q_new, j_new = trial(eps)
        used = eps
        eps = eps / 2.0
    return StepResult(q=q_new, step=used, accepted=bool(j_new <= j_old), eps_final=eps,
                      trials=tuple(trials), value=j_new)


# -- driver -------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    value: FunctionalValue
    step: float
    gradient_norm: float
    control: np.ndarray


@dataclass
class OptimizationHistory:
    records: list[IterationRecord] = field(default_factory=list)
    control: ControlFunction | None = None
    state: StateSolution | None = None
    stop_reason: str = ""
    divergence_residuals: list[float] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value.total for r in self.records])

    @property
    def iterations(self) -> int:
        """Number of accepted descent steps."""
        return max(len(self.records) - 1, 0)

    def is_monotone(self) -> bool:
        v = self.values
        return bool(np.all(np.diff(v) <= 0.0))


def _l2_norm(q: ControlFunction) -> float:
    x, w = gauss_points(q.grid, 3)
    return math.sqrt(float(np.dot(w, q.eval(x) ** 2)))


def run_optimization(q0, data: ProblemData, cfg: OptimizerConfig, space: TaylorHoodSpace,
                     grid: ControlGrid | None = None,
                     callback: Callable[[IterationRecord], None] | None = None) -> OptimizationHistory:
    """Iterate state, adjoint, density, projection and backtracking until the step collapses."""
    grid = grid or ControlGrid.uniform(space.mesh.n)
    q = as_control_function(q0, grid)
    spec = cfg.spec
    route = cfg.resolved_route
    history = OptimizationHistory()
    last: dict[bytes, StateSolution] = {}   # only the latest trial; the accepted q is always it
    base: list[StateSolution] = []   # state whose LU preconditions the next solves

    def solve(qq: ControlFunction) -> StateSolution:
        reuse = base[0].factorization if base and cfg.reuse_factorization else None
        st = solve_state(qq, data, space, cfg.degree, reuse)
        history.divergence_residuals.append(st.divergence_residual)
        return st

    def eval_j(qq: ControlFunction) -> float:
        try:
            st = solve(qq)
        except DegenerateDomainError:
            return math.inf
        last.clear()
        last[qq.values.tobytes()] = st
        return eval_functional(st, spec).total

    state = solve(q)
    base.append(state)
    step = 0.0
    for it in range(cfg.max_iters + 1):
        value = eval_functional(state, spec)
        report = check_admissible(q, cfg.admissibility)
        if not report.admissible:
            log.info("iteration %d: admissibility flags %s", it, ", ".join(report.violations()))
        adjoint = solve_adjoint(state, spec.target)
        density = eval_gradient_density(state, adjoint, spec, grid, route)
        g = project_gradient(density, space)
        gnorm = _l2_norm(g)
        record = IterationRecord(it, value, step, gnorm, q.values.copy())
        history.records.append(record)
        if callback is not None:
            callback(record)
        if it == cfg.max_iters:
            history.stop_reason = "max_iters"
            break
        if gnorm <= cfg.gtol:
            history.stop_reason = "gradient_tolerance"
            break
        res = backtracking_step(q, g, value.total, eval_j, cfg.eps_hat, cfg.eps_min)
        if not res.accepted:
            history.stop_reason = "no_descent"
            break
        q, step = res.q, res.step
        state = last.get(q.values.tobytes()) or solve(q)
        if state.factorization.borrowed and state.diagnostics.krylov_iterations > REFRESH_KRYLOV:
            state.factorization.refactorize()
        base[0] = state
        if res.eps_final <= cfg.eps_min:
            history.records.append(IterationRecord(it + 1, eval_functional(state, spec), step,
                                                   float("nan"), q.values.copy()))
            history.stop_reason = "eps_min"
            break
    history.control = q
    history.state = state
    return history
