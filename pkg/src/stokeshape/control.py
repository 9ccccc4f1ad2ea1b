"""Control functions on I = (0, 1) describing the lower boundary of the flow domain.

A control ``q`` is a continuous piecewise polynomial (nodal Lagrange basis,
degree 1 by default) that vanishes at both endpoints.  Analytic controls
given by closed-form expressions share the same evaluation interface and are
used for presets, targets and manufactured solutions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import sympy

# continuous inf-sup constant of the unit square, lower bound
BETA_HAT = 1.0 / (4.0 * math.sqrt(2.0))


class ControlDomainError(ValueError):
    """Raised when a control is evaluated outside of [0, 1]."""


class Control(Protocol):
    def eval(self, x, order: int = 0) -> np.ndarray: ...


@dataclass(frozen=True)
class ControlGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("control grid needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("control grid must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("control grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n_cells: int) -> "ControlGrid":
        return cls(np.linspace(0.0, 1.0, n_cells + 1))

    @property
    def sigma(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def lagrange_nodes(self, degree: int) -> np.ndarray:
        """All interpolation nodes of the degree-``degree`` nodal basis, ordered."""
        if degree == 1:
            return self.nodes.copy()
        local = np.linspace(0.0, 1.0, degree + 1)[:-1]
        pts = (self.nodes[:-1, None] + self.widths[:, None] * local[None, :]).ravel()
        return np.append(pts, 1.0)


@lru_cache(maxsize=None)
def _lagrange_coefficients(degree: int) -> tuple[np.ndarray, ...]:
    """Power-basis coefficients of the local Lagrange polynomials and their derivatives."""
    t = np.linspace(0.0, 1.0, degree + 1)
    derivs = []
    base = []
    for j in range(degree + 1):
        others = np.delete(t, j)
        poly = np.polynomial.Polynomial.fromroots(others)
        base.append(poly / poly(t[j]))
    for order in range(degree + 1):
        derivs.append(np.array([np.pad(b.deriv(order).coef, (0, degree + 1))[: degree + 1]
                                for b in base]))
    return tuple(derivs)


@dataclass(frozen=True)
class ControlFunction:
    """Continuous piecewise-polynomial control on a :class:`ControlGrid`.

    ``values`` holds the nodal values at ``grid.lagrange_nodes(degree)``.  The
    endpoint values are clamped to zero on construction.
    """

    grid: ControlGrid
    values: np.ndarray
    degree: int = 1

    def __post_init__(self):
        if self.degree not in (1, 2, 3, 4):
            raise ValueError("supported control degrees are 1..4")
        vals = np.array(self.values, dtype=float)
        expected = self.degree * self.grid.n_cells + 1
        if vals.shape != (expected,):
            raise ValueError(f"expected {expected} nodal values, got {vals.shape}")
        vals[0] = 0.0
        vals[-1] = 0.0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: ControlGrid, degree: int = 1) -> "ControlFunction":
        return cls(grid, np.zeros(degree * grid.n_cells + 1), degree)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.lagrange_nodes(self.degree)

    def with_values(self, values) -> "ControlFunction":
        return ControlFunction(self.grid, values, self.degree)

    def __add__(self, other: "ControlFunction") -> "ControlFunction":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ControlFunction") -> "ControlFunction":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "ControlFunction":
        return self.with_values(scalar * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "ControlFunction":
        return self.with_values(-self.values)

    def _check_compatible(self, other):
        if (not isinstance(other, ControlFunction) or other.degree != self.degree
                or not np.array_equal(other.grid.nodes, self.grid.nodes)):
            raise ValueError("controls live on different discretizations")

    def eval(self, x, order: int = 0) -> np.ndarray:
        """Evaluate the ``order``-th derivative of the control at ``x``.

        Derivatives at cell interfaces are taken from the cell to the right
        (the last cell at x = 1).
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-14) or np.any(x > 1.0 + 1e-14):
            raise ControlDomainError("control evaluated outside of [0, 1]")
        if order > self.degree:
            return np.zeros_like(x)
        nodes = self.grid.nodes
        cell = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
        width = nodes[cell + 1] - nodes[cell]
        t = (x - nodes[cell]) / width
        coef = _lagrange_coefficients(self.degree)[order]
        k = self.degree
        local_vals = self.values[cell[..., None] * k + np.arange(k + 1)]
        powers = t[..., None] ** np.arange(k + 1)
        basis = powers @ coef.T
        return np.sum(basis * local_vals, axis=-1) / width ** order

    def slopes(self) -> np.ndarray:
        """Cellwise slopes of a piecewise-linear control."""
        if self.degree != 1:
            raise ValueError("slopes are defined for piecewise-linear controls")
        return np.diff(self.values) / self.grid.widths


@dataclass(frozen=True)
class AnalyticControl:
    """Closed-form control with exact derivatives (up to third order)."""

    expression: str
    derivatives: tuple[Callable, ...] = field(repr=False, compare=False, default=())

    @classmethod
    def from_expression(cls, expression: str) -> "AnalyticControl":
        x = sympy.Symbol("x", real=True)
        expr = sympy.sympify(expression, locals={"x": x})
        funcs = []
        for order in range(4):
            funcs.append(sympy.lambdify(x, sympy.diff(expr, x, order), "numpy"))
        return cls(expression, tuple(funcs))

    def eval(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-14) or np.any(x > 1.0 + 1e-14):
            raise ControlDomainError("control evaluated outside of [0, 1]")
        return np.broadcast_to(np.asarray(self.derivatives[order](x), dtype=float), x.shape).copy()


PRESETS = {
    "flat": "0",
    "parabolic": "0.2*(1 - 4*(x - 0.5)**2)",
    "sinusoidal": "0.1*sin(2*pi*x)**2",
    "target": "0.1 + 0.1*cos(2*pi*(x - 0.5))",
}


def preset(name: str) -> AnalyticControl:
    try:
        return AnalyticControl.from_expression(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown control preset {name!r}; choose from {sorted(PRESETS)}") from None


def eval_control(q: Control, x, order: int = 0) -> np.ndarray:
    return q.eval(x, order)


def interpolate_control(f, grid: ControlGrid, degree: int = 1) -> ControlFunction:
    """Nodal interpolant of ``f`` (a callable or a :class:`Control`)."""
    nodes = grid.lagrange_nodes(degree)
    values = f.eval(nodes) if hasattr(f, "eval") else np.asarray(f(nodes), dtype=float)
    values = np.broadcast_to(values, nodes.shape)
    return ControlFunction(grid, values, degree)


# -- integrals on I ---------------------------------------------------------

def gauss_points(grid: ControlGrid, n_points: int = 5):
    """Gauss-Legendre points and weights on every cell of ``grid``."""
    xi, wi = np.polynomial.legendre.leggauss(n_points)
    a = grid.nodes[:-1, None]
    h = grid.widths[:, None]
    x = a + 0.5 * h * (xi[None, :] + 1.0)
    w = 0.5 * h * wi[None, :]
    return x.ravel(), w.ravel()


def second_difference(q: ControlFunction):
    """Difference-quotient second derivative of a P1 control at interior nodes.

    Returns the values and the nodal weights (dual cell lengths) so that
    ``sum(weights * d2**2)`` approximates the squared L2 norm of q''.
    """
    h = q.grid.widths
    s = q.slopes()
    weights = 0.5 * (h[:-1] + h[1:])
    return (s[1:] - s[:-1]) / weights, weights


def second_difference_matrix(grid: ControlGrid) -> sp.csr_matrix:
    """Matrix mapping nodal values to interior second differences."""
    h = grid.widths
    n = grid.nodes.size
    w = 0.5 * (h[:-1] + h[1:])
    rows = np.repeat(np.arange(n - 2), 3)
    cols = (np.arange(n - 2)[:, None] + np.arange(3)[None, :]).ravel()
    data = np.column_stack([1.0 / h[:-1], -1.0 / h[:-1] - 1.0 / h[1:], 1.0 / h[1:]])
    data = (data / w[:, None]).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(n - 2, n))


def p1_mass_matrix(grid: ControlGrid) -> sp.csc_matrix:
    h = grid.widths
    n = grid.nodes.size
    main = np.zeros(n)
    main[:-1] += h / 3.0
    main[1:] += h / 3.0
    off = h / 6.0
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


def integrate(q: Control, grid: ControlGrid | None = None, n_points: int = 5) -> float:
    """Integral of ``q`` over I (exact for piecewise polynomials up to degree 9)."""
    if isinstance(q, ControlFunction):
        grid = q.grid
    elif grid is None:
        grid = ControlGrid.uniform(256)
    x, w = gauss_points(grid, n_points)
    return float(np.dot(w, q.eval(x)))


def perimeter(q: Control, grid: ControlGrid | None = None, n_points: int = 5) -> float:
    """Length of the graph of ``q``."""
    if isinstance(q, ControlFunction) and q.degree == 1:
        return float(np.sum(q.grid.widths * np.sqrt(1.0 + q.slopes() ** 2)))
    if isinstance(q, ControlFunction):
        grid = q.grid
    elif grid is None:
        grid = ControlGrid.uniform(256)
    x, w = gauss_points(grid, n_points)
    return float(np.dot(w, np.sqrt(1.0 + q.eval(x, 1) ** 2)))


def curvature_norm_sq(q: Control, grid: ControlGrid | None = None, n_points: int = 5) -> float:
    """Squared L2(I) norm of q'' (difference quotients for P1 controls)."""
    if isinstance(q, ControlFunction) and q.degree == 1:
        d2, w = second_difference(q)
        return float(np.dot(w, d2 ** 2))
    if isinstance(q, ControlFunction):
        grid = q.grid
    elif grid is None:
        grid = ControlGrid.uniform(256)
    x, w = gauss_points(grid, n_points)
    return float(np.dot(w, q.eval(x, 2) ** 2))


# -- admissibility ------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityParams:
    epsilon: float = 0.1
    norm_bound: float = 50.0
    xi: float = 0.9
    c_infinity: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        if self.norm_bound <= 0 or self.c_infinity <= 0:
            raise ValueError("norm bounds must be positive")


@dataclass(frozen=True)
class AdmissibilityReport:
    max_height: float
    height_ok: bool
    h3_proxy: float
    h3_ok: bool
    w1inf_proxy: float
    w1inf_threshold: float
    w1inf_ok: bool
    w3inf_proxy: float
    w3inf_ok: bool
    endpoint_ok: bool

    @property
    def admissible(self) -> bool:
        return self.height_ok and self.h3_ok and self.endpoint_ok

    def violations(self) -> list[str]:
        names = {"height_ok": "height", "h3_ok": "H3 bound", "w1inf_ok": "W1,inf inf-sup bound",
                 "w3inf_ok": "W3,inf bound", "endpoint_ok": "endpoint zeros"}
        return [label for attr, label in names.items() if not getattr(self, attr)]


def _derivative_samples(q: Control, density: int = 2048):
    """Sampled derivatives of ``q`` on I: list indexed by order (None if unavailable)."""
    if isinstance(q, ControlFunction):
        grid = q.grid
        x, w = gauss_points(grid, 5)
        max_order = q.degree
    else:
        grid = ControlGrid.uniform(density)
        x, w = gauss_points(grid, 5)
        max_order = 3
    samples = [q.eval(x, k) for k in range(max_order + 1)]
    return x, w, samples


def check_admissible(q: Control, params: AdmissibilityParams) -> AdmissibilityReport:
    x, w, samples = _derivative_samples(q)
    if isinstance(q, ControlFunction):
        max_height = float(max(np.max(q.values), np.max(samples[0])))
    else:
        max_height = float(np.max(samples[0]))
    endpoint_ok = bool(abs(float(q.eval(0.0))) < 1e-12 and abs(float(q.eval(1.0))) < 1e-12)

    norms_sq = [float(np.dot(w, s ** 2)) for s in samples[:2]]
    sup = [float(np.max(np.abs(s))) for s in samples]
    if isinstance(q, ControlFunction) and q.degree == 1:
        d2, weights = second_difference(q)
        norms_sq.append(float(np.dot(weights, d2 ** 2)))
        sup.append(float(np.max(np.abs(d2))) if d2.size else 0.0)
    else:
        norms_sq.extend(float(np.dot(w, s ** 2)) for s in samples[2:4])
    h3 = math.sqrt(sum(norms_sq))
    w1 = sup[0] + sup[1]
    w3 = sum(sup)
    threshold = params.xi * BETA_HAT
    return AdmissibilityReport(
        max_height=max_height,
        height_ok=max_height <= 1.0 - params.epsilon,
        h3_proxy=h3,
        h3_ok=h3 <= params.norm_bound,
        w1inf_proxy=w1,
        w1inf_threshold=threshold,
        w1inf_ok=w1 <= threshold,
        w3inf_proxy=w3,
        w3inf_ok=w3 <= params.c_infinity,
        endpoint_ok=endpoint_ok,
    )


def w1inf_norm(q: Control) -> float:
    """Sampled ||q||_inf + ||q'||_inf."""
    _, _, samples = _derivative_samples(q)
    return float(np.max(np.abs(samples[0])) + np.max(np.abs(samples[1])))


# -- CSV --------------------------------------------------------------------

def write_control_csv(q: ControlFunction, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "q"])
        for xi, qi in zip(q.nodes, q.values):
            writer.writerow([f"{xi:.17g}", f"{qi:.17g}"])


def read_control_csv(path: str | Path, grid: ControlGrid, degree: int = 1) -> ControlFunction:
    """Read ``x,q`` samples and re-interpolate them onto ``grid``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"x", "q"} <= set(rows[0]):
        raise ValueError(f"{path}: expected columns x,q")
    xs = np.array([float(r["x"]) for r in rows])
    qs = np.array([float(r["q"]) for r in rows])
    order = np.argsort(xs)
    xs, qs = xs[order], qs[order]
    return interpolate_control(lambda t: np.interp(t, xs, qs), grid, degree)


def as_control_function(q: Control, grid: ControlGrid, degree: int = 1) -> ControlFunction:
    if isinstance(q, ControlFunction) and np.array_equal(q.grid.nodes, grid.nodes) and q.degree == degree:
        return q
    return interpolate_control(q, grid, degree)


def random_smooth_control(rng: np.random.Generator, n_modes: int = 4, amplitude: float = 0.05) -> AnalyticControl:
    """Random sine series with decaying coefficients, zero at both endpoints."""
    coeffs = rng.normal(size=n_modes) * amplitude / np.arange(1, n_modes + 1) ** 2
    terms = " + ".join(f"({c:.17g})*sin({k}*pi*x)" for k, c in enumerate(coeffs, start=1))
    return AnalyticControl.from_expression(terms)


def sample_values(q: Control, xs: Sequence[float]) -> np.ndarray:
    return q.eval(np.asarray(xs, dtype=float))
