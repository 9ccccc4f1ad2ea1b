import numpy as np
import pytest
from conftest import grid_preset
from hypothesis import given, settings
from hypothesis import strategies as st

from stokeshape.control import ControlFunction, ControlGrid, integrate
from stokeshape.fem import build_mesh, build_space
from stokeshape.forms import ProblemData, default_data
from stokeshape.functional import FunctionalSpec, GradientDensity
from stokeshape.optimizer import OptimizerConfig, backtracking_step, project_gradient, run_optimization

GRID = ControlGrid.uniform(8)


def l2_sq(q):
    """Nodal (lumped) squared L2 norm; its gradient in the same inner product is 2q."""
    return float(q.values @ q.values * q.grid.sigma)


def test_projection_examples(spaces):
    s = spaces(8)
    g = project_gradient(GradientDensity(GRID, np.zeros(9)), s)
    assert np.all(g.values == 0)
    g = project_gradient(GradientDensity(GRID, np.ones(9)), s)
    assert g.values[0] == 0.0 and g.values[-1] == 0.0
    assert np.all(g.values[1:-1] > 0)


@given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.floats(-4, 4))
@settings(max_examples=20, deadline=None)
def test_projection_linear(spaces, vals, c):
    s = spaces(8)
    a = project_gradient(GradientDensity(GRID, np.array(vals)), s).values
    b = project_gradient(GradientDensity(GRID, c * np.array(vals)), s).values
    assert np.max(np.abs(b - c * a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_backtracking_zero_direction():
    q = ControlFunction(GRID, np.linspace(0, 1, 9) * 0.1)
    res = backtracking_step(q, ControlFunction.zeros(GRID), 1.0, lambda _: 1.0, 0.1, 1e-8)
    assert res.accepted and res.step == 0.1
    np.testing.assert_array_equal(res.q.values, q.values)


def test_backtracking_quadratic_model():
    q = ControlFunction(GRID, np.sin(np.pi * GRID.nodes))
    g = 2.0 * q    # gradient of ||q||^2 in the nodal inner product
    res = backtracking_step(q, g, l2_sq(q), l2_sq, 0.1, 1e-8)
    assert res.accepted and res.step == 0.1 and res.trials == (0.1,)
    np.testing.assert_allclose(res.q.values, 0.8 * q.values)
    assert res.value == pytest.approx(0.64 * l2_sq(q))


def test_backtracking_adversarial():
    q = ControlFunction.zeros(GRID)
    g = ControlFunction(GRID, np.ones(9))
    calls = []

    def increasing(qq):
        calls.append(qq)
        return 1.0 + float(np.abs(qq.values).sum())

    res = backtracking_step(q, g, 1.0, increasing, 0.1, 1e-8)
    assert not res.accepted
    assert res.eps_final <= 1e-8
    assert res.trials[:3] == (0.1, 0.1, 0.05)
    assert len(calls) == len(set(res.trials))   # the repeated eps_hat trial is not re-solved
    assert res.q.values[0] == 0.0 and res.q.values[-1] == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(FunctionalSpec(), eps_hat=1e-9, eps_min=1e-8)
    with pytest.raises(ValueError):
        OptimizerConfig(FunctionalSpec(), route="newton")
    assert OptimizerConfig(FunctionalSpec()).resolved_route == "hadamard"


def test_stationary_start(spaces):
    q0 = grid_preset("parabolic", 8)
    spec = FunctionalSpec(alpha=0.0, beta=1.0, vbar=integrate(q0))
    h = run_optimization(q0, ProblemData(), OptimizerConfig(spec), spaces(8))
    assert h.iterations == 0
    assert h.records[0].gradient_norm == 0.0
    np.testing.assert_array_equal(h.control.values, q0.values)


@pytest.fixture(scope="module")
def short_run():
    s = build_space(build_mesh(8))
    spec = FunctionalSpec(alpha=1.0, beta=100.0, vbar=0.08)
    cfg = OptimizerConfig(spec, max_iters=8)
    return [run_optimization(grid_preset("parabolic", 8), default_data(), cfg, s) for _ in range(2)]


def test_monotone_and_divergence_free(short_run):
    h = short_run[0]
    assert h.iterations >= 3
    assert h.is_monotone()
    assert max(h.divergence_residuals) <= 1e-9
    assert h.stop_reason in ("max_iters", "eps_min", "no_descent")
    for r in h.records:
        assert r.control[0] == 0.0 and r.control[-1] == 0.0


def test_deterministic(short_run):
    a, b = short_run
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.control.values, b.control.values)
