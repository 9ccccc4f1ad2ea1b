from __future__ import annotations

import numpy as np
import pytest

from stokeshape.control import ControlGrid, interpolate_control, preset
from stokeshape.fem import build_mesh, build_space
from stokeshape.forms import default_data

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


class Shift:
    """q + t*dq as an evaluable control (for finite differences)."""

    def __init__(self, q, dq, t):
        self.q, self.dq, self.t = q, dq, t

    def eval(self, x, order=0):
        return self.q.eval(x, order) + self.t * self.dq.eval(x, order)


@pytest.fixture(scope="session")
def spaces():
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = build_space(build_mesh(n))
        return cache[n]
    return get


@pytest.fixture(scope="session")
def data():
    return default_data()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def grid_preset(name: str, n: int):
    return interpolate_control(preset(name), ControlGrid.uniform(n))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
