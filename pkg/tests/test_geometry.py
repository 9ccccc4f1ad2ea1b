import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from stokeshape.control import AnalyticControl, ControlFunction, ControlGrid, second_difference
from stokeshape.geometry import (DegenerateDomainError, eigen_lower_bound, map_first_variation,
                                 map_forward, map_quantities, map_second_variation, min_eigenvalue,
                                 physical_variation_field, quantities_from_values)

ZERO = AnalyticControl.from_expression("0")
BUMP = AnalyticControl.from_expression("x*(1 - x)")


def const_height(c):
    # a "control" with q(0.5) = c and q'(0.5) = 0, used only at x = 0.5
    return AnalyticControl.from_expression(f"{4 * c}*x*(1 - x)")


def test_map_forward_examples():
    x, y = np.array([0.2, 0.7]), np.array([0.1, 0.9])
    X, Y = map_forward(ZERO, x, y)
    np.testing.assert_array_equal(Y, y)
    q = const_height(0.2)
    assert map_forward(q, 0.5, 0.5)[1] == pytest.approx(0.6)
    assert map_forward(q, 0.5, 1.0)[1] == pytest.approx(1.0)


def test_map_quantities_identity():
    m = map_quantities(ZERO, np.array([0.3]), np.array([0.4]))
    np.testing.assert_allclose(m.DT[0], np.eye(2))
    np.testing.assert_allclose(m.A[0], np.eye(2))
    assert m.gamma[0] == 1.0


def test_gamma_example_and_cofactor():
    m = map_quantities(const_height(0.2), 0.5, 0.5)
    assert m.gamma == pytest.approx(0.8)
    q0, q1, y = 0.15, -0.4, 0.3
    m = quantities_from_values(q0, q1, y)
    expected = np.array([[-q0, -(1 - y) * q1], [0.0, 0.0]])
    np.testing.assert_allclose(m.cof - np.eye(2), expected, atol=1e-15)


def test_degenerate_map():
    with pytest.raises(DegenerateDomainError):
        quantities_from_values(1.0, 0.0, 0.5)


@given(st.floats(-0.5, 0.9), st.floats(-3, 3), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_map_identities(q0, q1, y):
    m = quantities_from_values(q0, q1, y)
    assert m.gamma == pytest.approx(np.linalg.det(m.DT), rel=1e-12)
    np.testing.assert_allclose(m.DTinv @ m.DT, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(m.A, m.gamma * m.DTinv @ m.DTinv.T, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m.cof, m.gamma * m.DTinv.T, rtol=1e-12, atol=1e-12)
    assert min_eigenvalue(m.A) > 0


def test_first_variation_examples():
    x, y = np.array([0.5]), np.array([0.5])
    v = map_first_variation(BUMP, ZERO, x, y)
    for arr in (v.Vdq, v.gamma_dot, v.A_dot, v.cof_DV):
        assert np.all(arr == 0)
    v = map_first_variation(ZERO, BUMP, x, y)
    assert v.gamma_dot[0] == pytest.approx(-0.25)


def test_cof_dv_divergence_free():
    # columns of cof(DV) are (-dq, 0) and (-(1-y) dq', 0): divergence d/dx of row 1
    x, y = sympy.symbols("x y")
    dq = sympy.sin(3 * x) * x * (1 - x)
    cof = sympy.Matrix([[-dq, -(1 - y) * sympy.diff(dq, x)], [0, 0]])
    div = [sympy.simplify(sympy.diff(cof[i, 0], x) + sympy.diff(cof[i, 1], y)) for i in range(2)]
    assert div == [0, 0]
    ctl = AnalyticControl.from_expression(str(dq))
    pts = np.linspace(0.05, 0.95, 7)
    v = map_first_variation(ZERO, ctl, pts, 0.3 * np.ones_like(pts))
    np.testing.assert_allclose(v.cof_DV[:, 0, 0], -ctl.eval(pts))
    np.testing.assert_allclose(v.cof_DV[:, 0, 1], -0.7 * ctl.eval(pts, 1))


def test_first_variation_matches_finite_differences():
    q = AnalyticControl.from_expression("0.2*sin(pi*x)**2")
    dq = AnalyticControl.from_expression("0.3*x*(1 - x)*cos(2*x)")
    x = np.linspace(0.03, 0.97, 25)
    y = np.linspace(0.0, 1.0, 25)
    v = map_first_variation(q, dq, x, y)
    for t in (1e-4, 1e-5):
        up = quantities_from_values(q.eval(x) + t * dq.eval(x), q.eval(x, 1) + t * dq.eval(x, 1), y)
        dn = quantities_from_values(q.eval(x) - t * dq.eval(x), q.eval(x, 1) - t * dq.eval(x, 1), y)
        fd = (up.A - dn.A) / (2 * t)
        assert np.max(np.abs(fd - v.A_dot)) <= 1e-6 * np.max(np.abs(v.A_dot))
        np.testing.assert_allclose((up.gamma - dn.gamma) / (2 * t), v.gamma_dot, rtol=1e-8)


def test_second_variation_examples():
    x, y = np.array([0.4]), np.array([0.2])
    s = map_second_variation(BUMP, ZERO, ZERO, x, y)
    assert np.all(s.A_ddot == 0) and np.all(s.gamma_ddot == 0)
    s = map_second_variation(ZERO, BUMP, AnalyticControl.from_expression("sin(pi*x)"), x, y)
    assert s.A_ddot[0, 0, 0] == 0.0
    assert s.gamma_ddot[0] == 0.0
    np.testing.assert_allclose(s.A_ddot[0], s.A_ddot[0].T)


def test_second_variation_matches_finite_differences():
    q = AnalyticControl.from_expression("0.15*sin(pi*x)")
    dq = AnalyticControl.from_expression("x*(1 - x)")
    tq = AnalyticControl.from_expression("0.5*sin(2*pi*x)")
    x = np.linspace(0.05, 0.95, 19)
    y = np.linspace(0.0, 0.9, 19)
    s = map_second_variation(q, dq, tq, x, y)
    t = 1e-4

    def adot(shift):
        qq = AnalyticControl.from_expression(f"0.15*sin(pi*x) + ({shift})*0.5*sin(2*pi*x)")
        return map_first_variation(qq, dq, x, y).A_dot

    fd = (adot(t) - adot(-t)) / (2 * t)
    assert np.max(np.abs(fd - s.A_ddot)) <= 1e-6 * np.max(np.abs(s.A_ddot))


def test_physical_variation_field_consistency():
    q = AnalyticControl.from_expression("0.1*sin(pi*x)")
    dq = AnalyticControl.from_expression("x*(1 - x)")
    x, y = np.array([0.3]), np.array([0.6])
    X, Y = map_forward(q, x, y)
    V = physical_variation_field(q, dq, X, Y)
    ref = map_first_variation(q, dq, x, y).Vdq
    np.testing.assert_allclose(V, ref)


def test_eigen_lower_bound_example():
    assert eigen_lower_bound(0.0, 0.0, 0.5) == pytest.approx(2 / (3 + math.sqrt(5)))
    assert eigen_lower_bound(0.0, 0.0, 0.5) == pytest.approx(0.381966, abs=1e-6)
    with pytest.raises(ValueError):
        eigen_lower_bound(0.0, 0.0, 1.0)


@given(st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 0.99))
@settings(max_examples=50, deadline=None)
def test_eigen_lower_bound_positive(d1, d2, eps):
    assert eigen_lower_bound(d1, d2, eps) > 0


def test_sampled_min_eigenvalue_above_bound():
    q = ControlFunction(ControlGrid.uniform(4), np.array([0, 0.1, 0.25, 0.1, 0]))
    x = np.linspace(0, 1, 41)
    X, Y = np.meshgrid(x, x)
    m = map_quantities(q, X, Y)
    d2 = abs(float(q.eval(0.0, 1)))
    d1 = float(np.max(np.abs(second_difference(q)[0])))   # q'' of a P1 control is a measure
    eps = float(np.min(1 - q.eval(x)))
    assert np.min(min_eigenvalue(m.A)) >= eigen_lower_bound(d1, d2, eps) - 1e-14
