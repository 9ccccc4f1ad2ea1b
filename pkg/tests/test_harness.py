import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokeshape.config import ConfigError, ExperimentConfig, load_config, resolve_config
from stokeshape.functional import FunctionalValue
from stokeshape.harness import (ConvergenceRow, DegenerateSequenceError, build_report, fit_order,
                                richardson_extrapolate, saturation_flags, target_area)


def test_richardson_exact_quadratic():
    L, c, h = 0.7, 3.0, 0.1
    r = richardson_extrapolate(*(L + c * (h / k) ** 2 for k in (1, 2, 4)))
    assert r.limit == pytest.approx(L, abs=1e-14)
    assert r.order_defined and r.order == pytest.approx(2.0, abs=1e-10)


def test_richardson_constant_sequence():
    r = richardson_extrapolate(1.5, 1.5, 1.5)
    assert r.limit == 1.5
    assert not r.order_defined and r.order is None


def test_richardson_cubic_perturbation():
    L, c, d, h = 1.0, 2.0, 0.5, 0.1
    r = richardson_extrapolate(*(L + c * (h / k) ** 2 + d * (h / k) ** 3 for k in (1, 2, 4)))
    # the h^2 term cancels; the h^3 term leaves d h^3 (1/16 - 1/8) / 3
    assert r.limit - L == pytest.approx(-d * h ** 3 / 48, rel=1e-9)


def test_richardson_degenerate():
    with pytest.raises(DegenerateSequenceError):
        richardson_extrapolate(1.0, 0.5, 0.25, assumed_order=0.0)
    with pytest.raises(DegenerateSequenceError):
        richardson_extrapolate(2.0, 1.0, 1.0)


@given(st.floats(0.5, 4.0), st.floats(0.1, 10.0))
@settings(max_examples=30)
def test_fit_order_recovers_power(p, c):
    h = 1.0 / np.array([8, 16, 32, 64])
    assert fit_order(h, c * h ** p) == pytest.approx(p, abs=1e-9)


def test_fit_order_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_order([0.1], [1.0])
    with pytest.raises(ValueError):
        fit_order([0.1, 0.05], [1.0, 0.0])


def test_saturation_flags():
    assert saturation_flags([1.0, 0.3, 0.1, 0.12, 0.05]) == [False, False, False, True, True]
    assert saturation_flags([1.0]) == [False]


def _rows(values):
    return [ConvergenceRow(n, 1.0 / n, FunctionalValue(v, 0.0, 0.0), 5, "gradient_tolerance")
            for n, v in zip((8, 16, 32, 64), values)]


def test_report_exact_reference():
    vals = [4 ** -k for k in range(4)]
    rep = build_report(0.0, _rows(vals))
    assert rep.reference == 0.0 and rep.reference_method == "exact"
    assert rep.order == pytest.approx(2.0)
    assert all(r.used_in_fit for r in rep.rows)
    assert rep.local_orders == pytest.approx([2.0, 2.0, 2.0])


def test_report_richardson_reference_excludes_finest():
    L = 0.05
    vals = [L + 0.3 * (1 / n) ** 2 for n in (8, 16, 32, 64)]
    rep = build_report(0.1, _rows(vals))
    assert rep.reference_method == "richardson"
    assert rep.reference == pytest.approx(L, abs=1e-14)
    assert [r.used_in_fit for r in rep.rows] == [True, True, True, False]
    assert rep.order == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ConfigError):
        build_report(0.1, _rows(vals[:2]))


def test_report_saturated_levels_left_out():
    rep = build_report(0.0, _rows([1.0, 0.25, 0.0625, 0.07]))
    assert [r.saturated for r in rep.rows] == [False, False, False, True]
    assert rep.rows[-1].used_in_fit is False
    assert rep.as_dict()["rows"][0]["n"] == 8


def test_config_defaults_and_presets():
    cfg = resolve_config({})
    assert cfg.functional.alpha == 10.0 and cfg.functional.beta == 10000.0
    assert cfg.optimizer.eps_hat == 0.1 and cfg.optimizer.eps_min == 1e-8
    assert cfg.mesh.sizes == [8, 16, 32, 64]
    tc2 = resolve_config({"preset": "testcase2"})
    assert tc2.functional.variant == "perimeterTracking" and tc2.control.initial == "flat"
    sweep = resolve_config({"preset": "beta-sweep"})
    assert sweep.functional.alpha == 0.0 and sweep.sweep.parameter == "beta"
    explicit = resolve_config({"preset": "testcase2", "functional": {"alpha": 0.1}})
    assert explicit.functional.alpha == 0.1


def test_target_area_fraction():
    cfg = resolve_config({})
    assert target_area(cfg) == pytest.approx(0.7 * 0.2 * 2 / 3, rel=1e-6)
    assert target_area(resolve_config({"functional": {"vbar": 0.05}})) == 0.05


@pytest.mark.parametrize("raw", [
    {"mesh": {"sizes": [16, 8]}},
    {"functional": {"variant": "tracking"}},
    {"functional": {"alpha": -1}},
    {"optimizer": {"eps_min": 1.0}},
    {"optimizer": {"route": "magic"}},
    {"bogus": 1},
    {"mesh": {"nn": 3}},
    {"mesh": 4},
    {"preset": "nope"},
    {"sweep": {"parameter": "gamma"}},
])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        resolve_config(raw)


def test_load_config_files(tmp_path):
    assert isinstance(load_config(None), ExperimentConfig)
    p = tmp_path / "c.yaml"
    p.write_text("preset: testcase1\nmesh:\n  n: 8\n")
    cfg = load_config(p)
    assert cfg.mesh.n == 8
    cfg.dump(tmp_path / "back.yaml")
    assert load_config(tmp_path / "back.yaml") == cfg
    p.write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("mesh: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
