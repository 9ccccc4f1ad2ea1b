"""Experiment drivers, convergence reports and result export."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig
from .control import (PRESETS, ControlFunction, ControlGrid, interpolate_control, preset,
                      read_control_csv, write_control_csv)
from .fem import TaylorHoodSpace, build_mesh, build_space, export_mesh
from .forms import ProblemData, default_data
from .functional import FunctionalSpec, FunctionalValue, area, eval_functional
from .optimizer import OptimizationHistory, OptimizerConfig, run_optimization
from .state import StateSolution, export_solution_csv, solve_state

log = logging.getLogger(__name__)


class DegenerateSequenceError(ArithmeticError):
    """Richardson extrapolation cannot be formed from the given values."""


# -- extrapolation and order fits ---------------------------------------------------

@dataclass(frozen=True)
class RichardsonResult:
    limit: float
    order: float | None       # empirical order, None when undefined
    order_defined: bool


def richardson_extrapolate(v_h: float, v_h2: float, v_h4: float, assumed_order: float = 2.0,
                           ratio: float = 2.0) -> RichardsonResult:
    """Limit from three values on h, h/ratio, h/ratio^2 assuming error ~ h^assumed_order.

    Returns the extrapolated limit and the empirical order
    log_ratio((v_h - v_h2) / (v_h2 - v_h4)), flagged undefined when the
    differences vanish or change sign.

    Raises
    ------
    DegenerateSequenceError
        If ratio**assumed_order == 1, or the finest difference vanishes while
        the coarse one does not.
    """
    factor = ratio ** assumed_order
    if factor == 1.0:
        raise DegenerateSequenceError("ratio**assumed_order equals 1: zero denominator")
    d1, d2 = v_h - v_h2, v_h2 - v_h4
    limit = v_h2 + (v_h4 - v_h2) * factor / (factor - 1.0)
    if d2 == 0.0 and d1 != 0.0:
        raise DegenerateSequenceError("finest two values coincide while coarser ones differ")
    if d2 == 0.0 or d1 / d2 <= 0.0:
        return RichardsonResult(limit, None, False)
    return RichardsonResult(limit, math.log(d1 / d2) / math.log(ratio), True)


def fit_order(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.size < 2:
        raise ValueError("an order fit needs at least two levels")
    if np.any(err <= 0) or np.any(h <= 0):
        raise ValueError("order fit needs positive h and errors")
    slope, _ = np.polyfit(np.log(h), np.log(err), 1)
    return float(slope)


def saturation_flags(err: Sequence[float]) -> list[bool]:
    """Flag levels (after the first) whose error stops decreasing."""
    flags = [False]
    for a, b in zip(err, err[1:]):
        flags.append(bool(flags[-1] or b >= a))
    return flags


# -- setup helpers --------------------------------------------------------------------

def problem_data(cfg: ExperimentConfig) -> ProblemData:
    base = default_data()
    return replace(base, nu=cfg.data.nu, eta=cfg.data.eta)


def initial_control(name: str, grid: ControlGrid) -> ControlFunction:
    if name in PRESETS:
        return interpolate_control(preset(name), grid)
    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"initial control {name!r} is neither a preset {sorted(PRESETS)} nor a CSV file")
    return read_control_csv(path, grid)


def target_area(cfg: ExperimentConfig) -> float:
    f = cfg.functional
    if f.vbar is not None:
        return float(f.vbar)
    return f.vbar_fraction * area(preset(f.vbar_reference))


def build_level(n: int) -> TaylorHoodSpace:
    return build_space(build_mesh(n))


def functional_spec(cfg: ExperimentConfig, space: TaylorHoodSpace, data: ProblemData,
                    alpha: float | None = None, beta: float | None = None) -> FunctionalSpec:
    f = cfg.functional
    target = None
    if f.variant == "perimeterTracking":
        target = solve_state(preset(cfg.control.target), data, space, cfg.mesh.degree).u
    return FunctionalSpec(variant=f.variant, alpha=f.alpha if alpha is None else alpha,
                          beta=f.beta if beta is None else beta, vbar=target_area(cfg),
                          target=target, toggle=f.toggle)


def optimizer_config(cfg: ExperimentConfig, spec: FunctionalSpec, **overrides) -> OptimizerConfig:
    o = cfg.optimizer
    kw = dict(spec=spec, eps_hat=o.eps_hat, eps_min=o.eps_min, max_iters=o.max_iters, gtol=o.gtol,
              route=o.route, degree=cfg.mesh.degree, reuse_factorization=o.reuse_factorization)
    kw.update(overrides)
    return OptimizerConfig(**kw)


# -- writers ----------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _clean(obj):
    """JSON-safe copy: numpy scalars to floats, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


HISTORY_HEADER = ("iter", "j", "j_energy", "j_reg", "j_vol", "step")


def write_history_csv(history: OptimizationHistory, path: Path) -> None:
    rows = [(r.iteration, r.value.total, r.value.energy, r.value.reg, r.value.vol, r.step)
            for r in history.records]
    write_rows(path, HISTORY_HEADER, rows)


def _terms(v: FunctionalValue) -> dict[str, float]:
    return {"j": v.total, "j_energy": v.energy, "j_reg": v.reg, "j_vol": v.vol}


def write_gnuplot(path: Path, body: str) -> None:
    path.write_text("# gnuplot script; run with: gnuplot -p " + path.name + "\n"
                    "set datafile separator ','\nset key autotitle columnhead\n" + body)


# -- commands ------------------------------------------------------------------------------

def _prepare_out(cfg: ExperimentConfig, out: str | Path | None) -> Path:
    path = Path(out if out is not None else cfg.output.dir)
    path.mkdir(parents=True, exist_ok=True)
    cfg.dump(path / "config.resolved.yaml")
    return path


def _export_state(state: StateSolution, q: ControlFunction, out: Path, physical: bool, stem: str = "solution"):
    export_solution_csv(state.field, out / f"{stem}.csv")
    if physical:
        export_solution_csv(state.field, out / f"{stem}_physical.csv", control=q, physical=True)


def cmd_solve(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    """Solve the state for the initial control and export fields and diagnostics."""
    out = _prepare_out(cfg, out)
    data = problem_data(cfg)
    space = build_level(cfg.mesh.n)
    grid = ControlGrid.uniform(cfg.mesh.n)
    q = initial_control(cfg.control.initial, grid)
    state = solve_state(q, data, space, cfg.mesh.degree)
    spec = functional_spec(cfg, space, data)
    value = eval_functional(state, spec)
    write_control_csv(q, out / "control.csv")
    _export_state(state, q, out, cfg.output.physical)
    export_mesh(space.mesh, out / "mesh.txt")
    summary = {
        "command": "solve", "n": cfg.mesh.n, "control": cfg.control.initial, **_terms(value),
        "divergence_residual": state.divergence_residual,
        "solver_residual": state.diagnostics.residual,
        "n_free_dofs": state.diagnostics.n_free, "area": area(q),
    }
    write_json(summary, out / "summary.json")
    if cfg.output.gnuplot:
        write_gnuplot(out / "plot.gp",
                      "set title 'velocity (physical domain)'\nset size ratio -1\n"
                      "plot 'solution_physical.csv' using 1:2:($3*0.05):($4*0.05) with vectors notitle, \\\n"
                      "     'control.csv' using 1:2 with lines lw 2 title 'wall'\n")
    return summary


def _run(cfg: ExperimentConfig, space, data, spec, q0, **overrides) -> OptimizationHistory:
    ocfg = optimizer_config(cfg, spec, **overrides)
    history = run_optimization(q0, data, ocfg, space, q0.grid)
    if not history.is_monotone():
        log.warning("accepted functional values are not monotone")
    return history


def _history_summary(history: OptimizationHistory) -> dict:
    last = history.records[-1]
    return {**_terms(last.value), "iterations": history.iterations, "stop_reason": history.stop_reason,
            "monotone": history.is_monotone(),
            "max_divergence_residual": max(history.divergence_residuals, default=0.0),
            "final_gradient_norm": last.gradient_norm}


def cmd_optimize(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    out = _prepare_out(cfg, out)
    data = problem_data(cfg)
    space = build_level(cfg.mesh.n)
    grid = ControlGrid.uniform(cfg.mesh.n)
    q0 = initial_control(cfg.control.initial, grid)
    spec = functional_spec(cfg, space, data)
    history = _run(cfg, space, data, spec, q0)
    write_control_csv(q0, out / "control_initial.csv")
    write_control_csv(history.control, out / "control_final.csv")
    write_history_csv(history, out / "history.csv")
    _export_state(history.state, history.control, out, cfg.output.physical)
    export_mesh(space.mesh, out / "mesh.txt")
    summary = {"command": "optimize", "n": cfg.mesh.n, "variant": spec.variant, "alpha": spec.alpha,
               "beta": spec.beta, "vbar": spec.vbar, "area_final": area(history.control),
               "route": optimizer_config(cfg, spec).resolved_route, **_history_summary(history)}
    write_json(summary, out / "summary.json")
    if cfg.output.gnuplot:
        write_gnuplot(out / "plot.gp",
                      "set multiplot layout 1,2\nset logscale y\nset xlabel 'iteration'\n"
                      "plot 'history.csv' using 1:2 with linespoints title 'j'\n"
                      "unset logscale y\nset xlabel 'x'\n"
                      "plot 'control_initial.csv' using 1:2 with lines title 'initial', \\\n"
                      "     'control_final.csv' using 1:2 with lines lw 2 title 'final'\n"
                      "unset multiplot\n")
    return summary


@dataclass
class ConvergenceRow:
    n: int
    h: float
    value: FunctionalValue
    iterations: int
    stop_reason: str
    error: float | None = None
    saturated: bool = False
    used_in_fit: bool = False


@dataclass
class ConvergenceReport:
    alpha: float
    rows: list[ConvergenceRow]
    reference: float
    reference_method: str                 # "exact" or "richardson"
    richardson_order: float | None = None
    order: float | None = None            # least-squares fit over the rows used
    local_orders: list[float | None] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "reference": self.reference, "reference_method": self.reference_method,
            "richardson_order": self.richardson_order, "fitted_order": self.order,
            "local_orders": self.local_orders,
            "rows": [{"n": r.n, "h": r.h, **_terms(r.value), "error": r.error,
                      "iterations": r.iterations, "stop_reason": r.stop_reason,
                      "saturated": r.saturated, "used_in_fit": r.used_in_fit} for r in self.rows],
        }


def build_report(alpha: float, rows: list[ConvergenceRow], exclude_saturated: bool = True) -> ConvergenceReport:
    """Attach reference, errors, saturation flags and the fitted order to per-level rows.

    For alpha = 0 the minimum is exactly zero.  Otherwise the reference is
    extrapolated from the three finest levels; the finest level's error is
    then fixed by the assumed order and is left out of the fit.
    """
    values = [r.value.total for r in rows]
    if alpha == 0.0:
        reference, method, r_order = 0.0, "exact", None
        candidates = list(range(len(rows)))
    else:
        if len(rows) < 3:
            raise ConfigError("Richardson extrapolation needs at least three mesh levels")
        rich = richardson_extrapolate(*values[-3:])
        reference, method, r_order = rich.limit, "richardson", rich.order
        candidates = list(range(len(rows) - 1))
    errors = [abs(v - reference) for v in values]
    sat = saturation_flags(errors)
    for r, e, s in zip(rows, errors, sat):
        r.error, r.saturated = e, s
    used = [i for i in candidates if errors[i] > 0 and not (exclude_saturated and sat[i])]
    for i in used:
        rows[i].used_in_fit = True
    order = fit_order([rows[i].h for i in used], [errors[i] for i in used]) if len(used) >= 2 else None
    local = [math.log2(a / b) if a > 0 and b > 0 else None for a, b in zip(errors, errors[1:])]
    return ConvergenceReport(alpha, rows, reference, method, r_order, order, local)


def run_convergence(cfg: ExperimentConfig, alpha: float, callback=None) -> ConvergenceReport:
    """Optimize on every mesh level (sigma = h unless configured) and report errors."""
    conv = cfg.converge
    data = problem_data(cfg)
    rows: list[ConvergenceRow] = []
    q_prev = None
    cells = cfg.mesh.control_cells or cfg.mesh.sizes
    for n, m in zip(cfg.mesh.sizes, cells):
        space = build_level(n)
        grid = ControlGrid.uniform(m)
        q0 = interpolate_control(q_prev, grid) if (conv.nested and q_prev is not None) \
            else initial_control(conv.initial, grid)
        spec = functional_spec(cfg, space, data, alpha=alpha)
        history = _run(cfg, space, data, spec, q0, gtol=conv.gtol, max_iters=conv.max_iters)
        q_prev = history.control
        row = ConvergenceRow(n, 1.0 / n, history.records[-1].value, history.iterations, history.stop_reason)
        rows.append(row)
        if callback is not None:
            callback(row, history)
    return build_report(alpha, rows, conv.exclude_saturated)


CONVERGENCE_HEADER = ("alpha", "n", "h", "j", "j_energy", "j_reg", "j_vol", "error", "iterations",
                      "saturated", "used_in_fit")


def cmd_converge(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    if cfg.functional.variant != "perimeterTracking":
        raise ConfigError("converge needs functional.variant = perimeterTracking")
    if any(a != 0.0 for a in cfg.converge.alphas) and len(cfg.mesh.sizes) < 3:
        raise ConfigError("Richardson extrapolation needs at least three mesh levels")
    out = _prepare_out(cfg, out)
    reports = []
    for alpha in cfg.converge.alphas:
        def keep(row, history, alpha=alpha):
            write_control_csv(history.control, out / f"control_alpha{alpha:g}_n{row.n}.csv")
        reports.append(run_convergence(cfg, alpha, keep))
    rows = []
    for rep in reports:
        for r in rep.rows:
            rows.append((rep.alpha, r.n, r.h, r.value.total, r.value.energy, r.value.reg, r.value.vol,
                         r.error, r.iterations, r.saturated, r.used_in_fit))
    write_rows(out / "convergence.csv", CONVERGENCE_HEADER, rows)
    summary = {"command": "converge", "reports": [rep.as_dict() for rep in reports]}
    write_json(summary, out / "summary.json")
    if cfg.output.gnuplot:
        plots = ", \\\n     ".join(
            f"'convergence.csv' using (column('alpha')=={a:g} ? $3 : 1/0):8 with linespoints title 'alpha={a:g}'"
            for a in cfg.converge.alphas)
        write_gnuplot(out / "plot.gp",
                      "set logscale xy\nset xlabel 'h'\nset ylabel 'error of j'\n"
                      "plot " + plots + ", \\\n     x**2 with lines dt 2 title 'h^2'\n")
    return summary


def cmd_sweep(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    out = _prepare_out(cfg, out)
    data = problem_data(cfg)
    space = build_level(cfg.mesh.n)
    grid = ControlGrid.uniform(cfg.mesh.n)
    q0 = initial_control(cfg.control.initial, grid)
    param = cfg.sweep.parameter
    rows, runs = [], []
    for value in cfg.sweep.values:
        spec = functional_spec(cfg, space, data, **{param: value})
        history = _run(cfg, space, data, spec, q0)
        tag = f"{param}{value:g}"
        write_history_csv(history, out / f"history_{tag}.csv")
        write_control_csv(history.control, out / f"control_{tag}.csv")
        info = _history_summary(history)
        runs.append({param: value, **info})
        last = history.records[-1].value
        rows.append((value, last.total, last.energy, last.reg, last.vol, history.iterations,
                     history.stop_reason))
    write_control_csv(q0, out / "control_initial.csv")
    write_rows(out / "sweep.csv", (param, "j", "j_energy", "j_reg", "j_vol", "iterations", "stop_reason"), rows)
    summary = {"command": "sweep", "parameter": param, "n": cfg.mesh.n, "runs": runs}
    write_json(summary, out / "summary.json")
    if cfg.output.gnuplot:
        plots = ", \\\n     ".join(f"'control_{param}{v:g}.csv' using 1:2 with lines title '{param}={v:g}'"
                                   for v in cfg.sweep.values)
        write_gnuplot(out / "plot.gp", "set xlabel 'x'\nset ylabel 'q'\nplot " + plots + "\n")
    return summary


COMMANDS = {"solve": cmd_solve, "optimize": cmd_optimize, "converge": cmd_converge, "sweep": cmd_sweep}
