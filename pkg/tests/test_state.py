import dataclasses

import numpy as np
import pytest
from scipy import integrate

from stokeshape.control import AnalyticControl, preset
from stokeshape.fem import GAMMA1, GAMMA3, Assembler, build_space
from stokeshape.forms import ProblemData
from stokeshape.geometry import map_forward
from stokeshape.state import assemble_state, estimate_infsup, export_solution_csv, solve_state

ZERO = AnalyticControl.from_expression("0")
PARABOLIC = preset("parabolic")


def test_zero_data_gives_zero_solution(spaces):
    sol = solve_state(PARABOLIC, ProblemData(), spaces(4))
    assert np.all(sol.field.vector == 0)


def test_state_matrix_symmetric(spaces, data):
    system = assemble_state(PARABOLIC, data, spaces(6))
    assert abs(system.A - system.A.T).max() <= 1e-12


def _side_flux(sol, tag):
    """int u_x dy along a vertical side; Simpson is exact for the P2 trace."""
    s = sol.space
    nodes = s.boundary_nodes(tag)
    nodes = nodes[np.argsort(s.node_coords[nodes, 1])]
    y = s.node_coords[nodes, 1]
    ux = sol.u[nodes]
    return float(np.sum((y[2::2] - y[:-2:2]) / 6 * (ux[:-2:2] + 4 * ux[1::2] + ux[2::2])))


@pytest.mark.parametrize("q", [ZERO, PARABOLIC], ids=["flat", "parabolic"])
def test_flow_rate_conserved(spaces, data, q):
    sol = solve_state(q, data, spaces(8))
    inflow = _side_flux(sol, GAMMA3)
    assert inflow == pytest.approx(2 / 3, abs=1e-12)   # int_0^1 y(2 - y) dy
    assert _side_flux(sol, GAMMA1) == pytest.approx(inflow, abs=1e-8)


def test_divergence_identity(spaces, data):
    sol = solve_state(preset("sinusoidal"), data, spaces(8))
    r = sol.system.B @ sol.u - sol.system.g
    assert np.max(np.abs(r)) <= 1e-9 * max(1.0, np.linalg.norm(sol.u))
    assert sol.divergence_residual <= 1e-9
    assert sol.diagnostics.residual <= 1e-10


def test_lifting_values_on_constrained_dofs(spaces, data):
    s = spaces(4)
    sol = solve_state(ZERO, data, s)
    np.testing.assert_array_equal(sol.u[s.constrained], s.lifting(data.gD)[s.constrained])


def _h1_seminorm(space, u):
    asm = Assembler(space)
    K = asm.stiffness(np.broadcast_to(np.eye(2), asm.weights.shape + (2, 2)))
    n = space.n_nodes
    return float(np.sqrt(u[:n] @ K @ u[:n] + u[n:] @ K @ u[n:]))


def test_solution_norm_bounded_uniformly_in_h(spaces, data):
    # the bound may depend on the admissible set but not on the mesh
    for c in (0.0, 0.2, 0.4):
        q = AnalyticControl.from_expression(f"{4 * c}*x*(1 - x)")
        norms = [_h1_seminorm(spaces(n), solve_state(q, data, spaces(n)).u) for n in (8, 16)]
        assert np.all(np.isfinite(norms))
        assert norms[1] == pytest.approx(norms[0], rel=0.05)


def test_csv_export(tmp_path, spaces, data):
    s = spaces(2)
    sol = solve_state(PARABOLIC, data, s)
    export_solution_csv(sol.field, tmp_path / "ref.csv")
    export_solution_csv(sol.field, tmp_path / "phys.csv", control=PARABOLIC, physical=True)
    ref = np.loadtxt(tmp_path / "ref.csv", delimiter=",", skiprows=1)
    phys = np.loadtxt(tmp_path / "phys.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "ref.csv").read_text().splitlines()[0] == "x,y,ux,uy,p"
    assert ref.shape == (9, 5)
    np.testing.assert_allclose(phys[:, 1], map_forward(PARABOLIC, ref[:, 0], ref[:, 1])[1], atol=1e-11)
    np.testing.assert_array_equal(phys[:, 2:], ref[:, 2:])
    with pytest.raises(ValueError):
        export_solution_csv(sol.field, tmp_path / "x.csv", physical=True)


def _physical_field(X, Y):
    return np.sin(np.pi * X) * Y, X * Y ** 2


def _exact_dirichlet_energy(q):
    def integrand(Y, X):
        g = (np.pi * np.cos(np.pi * X) * Y, np.sin(np.pi * X), Y ** 2, 2 * X * Y)
        return sum(v * v for v in g)
    val, _ = integrate.dblquad(integrand, 0, 1, lambda X: float(q.eval(X)), 1, epsabs=1e-12)
    return val


def test_pullback_energy_matches_mapped_mesh(spaces):
    q = PARABOLIC
    exact = _exact_dirichlet_energy(q)
    ref_err, phys_err = [], []
    for n in (8, 16):
        s = spaces(n)
        asm = Assembler(s)
        pulled = ProblemData()   # only used for the map
        A = assemble_state(q, pulled, s).A
        X, Y = map_forward(q, *s.node_coords.T)
        u = np.concatenate(_physical_field(X, Y))
        ref_err.append(abs(u @ A @ u - exact))

        moved = dataclasses.replace(s.mesh, vertices=np.column_stack(map_forward(q, *s.mesh.vertices.T)))
        ps = build_space(moved)
        pasm = Assembler(ps)
        K = pasm.stiffness(np.broadcast_to(np.eye(2), pasm.weights.shape + (2, 2)))
        ux, uy = _physical_field(*ps.node_coords.T)
        phys_err.append(abs(ux @ K @ ux + uy @ K @ uy - exact))
        assert asm.weights.shape == pasm.weights.shape
    assert ref_err[-1] < 1e-3 and phys_err[-1] < 1e-2
    assert ref_err[1] < ref_err[0] / 3 and phys_err[1] < phys_err[0] / 3


def test_infsup_zero_control(spaces):
    assert estimate_infsup(ZERO, spaces(8)) >= 0.17
