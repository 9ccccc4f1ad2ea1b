import numpy as np
import pytest
from conftest import Shift

from stokeshape.control import AnalyticControl, preset
from stokeshape.fem import build_mesh, build_space
from stokeshape.forms import default_data
from stokeshape.sensitivity import solve_second_sensitivity, solve_sensitivity
from stokeshape.state import solve_state

Q = preset("parabolic")
DQ = AnalyticControl.from_expression("x*(1 - x)*(1 + x)")
TQ = AnalyticControl.from_expression("sin(pi*x)**2")
ZERO = AnalyticControl.from_expression("0")


@pytest.fixture(scope="module")
def state8():
    return solve_state(Q, default_data(), build_space(build_mesh(8)))


def test_zero_direction(state8):
    s = solve_sensitivity(state8, ZERO)
    assert np.all(s.field.vector == 0)
    d = solve_sensitivity(state8, DQ)
    assert np.all(solve_second_sensitivity(state8, d, s).field.vector == 0)


def test_linear_in_direction(state8):
    one = solve_sensitivity(state8, DQ).field.vector
    two = solve_sensitivity(state8, AnalyticControl.from_expression("2*x*(1 - x)*(1 + x)")).field.vector
    assert np.max(np.abs(two - 2 * one)) <= 1e-10 * max(1.0, np.max(np.abs(one)))


def test_vanishes_on_dirichlet_dofs(state8):
    du = solve_sensitivity(state8, DQ).du
    assert np.all(du[state8.space.constrained] == 0)


def test_second_sensitivity_symmetric(state8):
    d, t = solve_sensitivity(state8, DQ), solve_sensitivity(state8, TQ)
    dt = solve_second_sensitivity(state8, d, t).field.vector
    td = solve_second_sensitivity(state8, t, d).field.vector
    assert np.max(np.abs(dt - td)) <= 1e-9 * max(1.0, np.max(np.abs(dt)))


def test_taylor_remainders(state8):
    d = solve_sensitivity(state8, DQ)
    dd = solve_second_sensitivity(state8, d, d)
    base = state8.field.vector
    ts = np.array([1e-1, 5e-2, 2.5e-2, 1.25e-2])
    r1, r2 = [], []
    for t in ts:
        v = solve_state(Shift(Q, DQ, t), state8.data, state8.space).field.vector
        r1.append(np.linalg.norm(v - base - t * d.field.vector))
        r2.append(np.linalg.norm(v - base - t * d.field.vector - 0.5 * t * t * dd.field.vector))
    assert np.polyfit(np.log(ts), np.log(r1), 1)[0] == pytest.approx(2.0, abs=0.1)
    assert np.polyfit(np.log(ts), np.log(r2), 1)[0] == pytest.approx(3.0, abs=0.2)
