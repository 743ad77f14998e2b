import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitstab.errors import GradientMismatch, HorizonExceeded, OutOfTube, TubeExit
from orbitstab.frame import ClosedFormTransverseModel, from_transverse
from orbitstab.hamilton import (assemble_hamiltonian, build_feedback_table, closed_loop_simulate, flow,
                                perturbation_probe, simulate_transverse, stable_trajectory,
                                symplectic_gradient_error, value_and_lagrangian_diagnostic)


def closed_form_H(x, p):
    g = np.array([-np.cos(x[0]), (1 + 2 * x[1]) * np.sin(x[0])])
    return p[0] - 0.25 * (g @ p) ** 2 + x[1] ** 2


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(-0.45, 0.45), st.floats(-3, 3), st.floats(-3, 3))
def test_hamiltonian_formula(x1, x2, p1, p2):
    hs = _repro_hs()
    y = np.array([x1, x2, p1, p2])
    assert np.isclose(hs.H(y), closed_form_H(y[:2], y[2:]), atol=1e-12)
    assert np.isclose(hs.H(np.array([x1, x2, 0.0, 0.0])), x2 ** 2, atol=1e-15)


_HS = {}


def _repro_hs():
    if "hs" not in _HS:
        from orbitstab.model import get_example
        from orbitstab.pipeline import Pipeline
        _HS["hs"] = Pipeline(get_example("mass-spring"), "reproduction").hs
    return _HS["hs"]


def test_zero_on_orbit(repro):
    hs = repro.hs
    for t in np.linspace(0, 2 * np.pi, 9):
        y = hs.on_manifold(t)
        assert hs.H(y) == 0.0
        assert np.allclose(hs.vector_field(0.0, y), [1, 0, 0, 0])


def test_optimal_input(repro):
    hs = repro.hs
    assert np.allclose(hs.optimal_input(np.zeros(2), np.array([1.0, 0.0])), 0.5)
    x, p = np.array([0.7, 0.1]), np.array([0.3, -0.8])
    u = hs.optimal_input(x, p)
    # stationarity of p.(F + Gm u) + q + u R u in u
    Gm = hs.tm.input_matrix(x)
    pre = lambda v: p @ (hs.tm.drift(x) + Gm @ v) + v @ hs.R @ v
    grad = (pre(u + 1e-6) - pre(u - 1e-6)) / 2e-6
    assert abs(grad[0] if np.ndim(grad) else grad) < 1e-8
    doubled = assemble_hamiltonian(hs.tm, 2 * hs.R, check=False)
    assert np.allclose(doubled.optimal_input(x, p), 0.5 * u)


@pytest.mark.parametrize("fixture", ["repro", "generic", "osc3d"])
def test_vector_field_is_symplectic_gradient(fixture, request):
    assert symplectic_gradient_error(request.getfixturevalue(fixture).hs, 30) < 1e-6


def test_gradient_mismatch_detected():
    tm = ClosedFormTransverseModel(2, 1, 2 * np.pi, drift=lambda x: np.array([1.0, -x[1]]),
                                   input_matrix=lambda x: np.array([[0.0], [1.0]]),
                                   cost=lambda x: x[1] ** 2,
                                   drift_jacobian=lambda x: np.zeros((2, 2)), tube_radius=1.0)
    with pytest.raises(GradientMismatch):
        assemble_hamiltonian(tm, np.eye(1))


def test_flow_on_orbit_and_energy(repro):
    hs = repro.hs
    tr = flow(hs, hs.on_manifold(0.3), (0, 2 * np.pi))
    assert np.allclose(tr.y[-1], [0.3 + 2 * np.pi, 0, 0, 0], atol=1e-12)
    tr = flow(hs, np.array([0.0, 0.05, 0.1, 0.2]), (0, 3.0))
    assert tr.max_H_drift < 1e-8
    assert np.all(np.diff(tr.cost) >= 0)


def test_flow_leaving_tube(repro):
    with pytest.raises(TubeExit):
        flow(repro.hs, np.array([1.0, 0.4, 0.0, -20.0]), (0, 10.0))


def test_trivial_bvp_on_orbit(repro):
    tr = stable_trajectory(repro.hs, np.array([0.5, 0.0]), repro.riccati)
    assert tr.cost < 1e-14
    assert np.max(np.abs(tr.p)) < 1e-10


def test_value_is_half_quadratic_near_orbit(repro):
    ratios = []
    for x1 in (0.0, 1.0, 2.5):
        for s in (0.01, 0.03, 0.05):
            tr = stable_trajectory(repro.hs, np.array([x1, s]), repro.riccati)
            ratios.append(tr.cost / (repro.riccati.P_at(x1)[0, 0] * s ** 2))
    assert np.all(np.abs(np.array(ratios) - 0.5) < 0.05)


@pytest.mark.parametrize("s", [0.3, -0.3])
def test_manifold_trajectory_converges(repro, s):
    tr = stable_trajectory(repro.hs, np.array([0.0, s]), repro.riccati)
    assert tr.terminal_x2 < 1e-4
    assert tr.max_abs_H < 1e-6
    assert tr.boundary_residual < 1e-8
    assert tr.fiber_residual(repro.riccati) < 1e-8
    T = repro.period
    env = [np.max(np.abs(tr.x[(tr.t >= k * T) & (tr.t <= (k + 1) * T), 1]))
           for k in range(int(round(tr.horizon / T)))]
    assert np.all(np.diff(env) < 0)
    xf = tr.x[-1]
    assert np.isclose(tr.tail_cost, 0.5 * repro.riccati.P_at(xf[0])[0, 0] * xf[1] ** 2, rtol=1e-12)


def test_horizon_cap(repro):
    with pytest.raises(HorizonExceeded):
        stable_trajectory(repro.hs, np.array([0.0, 0.3]), repro.riccati, max_periods=1, x2_tol=1e-12)


def test_bvp_rejects_points_outside_tube(repro):
    with pytest.raises(OutOfTube):
        stable_trajectory(repro.hs, np.array([0.0, 0.6]), repro.riccati)


def test_perturbation_probes_cost_more(repro):
    tr = stable_trajectory(repro.hs, np.array([1.0, 0.2]), repro.riccati)
    probes = perturbation_probe(repro.hs, tr, repro.riccati, n_dirs=8)
    assert len(probes) == 8
    assert min(c for c, _ in probes) >= tr.cost - 1e-9


def test_value_diagnostic_small_grid(repro):
    table = value_and_lagrangian_diagnostic(repro.hs, repro.riccati, [0.0, 2.0], [0.0, 0.2])
    assert not table.errors
    assert np.all(np.abs(table.V[:, 0]) < 1e-12)
    assert np.all(table.V[:, 1] > 0)
    assert np.nanmax(table.loop_residual) < 1e-3


def test_optimal_cheaper_than_linear(repro):
    x0 = np.array([0.0, 0.3])
    opt = stable_trajectory(repro.hs, x0, repro.riccati)
    lin = simulate_transverse(repro.tm, repro.cost.R, repro.feedback, x0, opt.horizon)
    assert opt.cost <= lin.total_cost + 0.5 * float(lin.x2[-1] @ repro.riccati.P_at(lin.x1[-1]) @ lin.x2[-1])


def test_closed_loop_on_orbit_stays(generic):
    z0 = generic.orbit(0.0)
    tr = closed_loop_simulate(generic.system, generic.cost, generic.orbit, generic.frame, generic.feedback,
                              z0, 2 * np.pi)
    assert np.max(tr.distance) < 1e-8
    assert tr.total_cost < 1e-12


def test_closed_loop_original_coordinates(generic):
    z0 = from_transverse(0.0, [0.2], generic.frame, generic.orbit)
    tr = closed_loop_simulate(generic.system, generic.cost, generic.orbit, generic.frame, generic.feedback,
                              z0, 4 * np.pi)
    assert tr.distance[-1] < 0.2 * np.exp(-1.3 * 4 * np.pi) * 10


def test_csv_headers(repro, tmp_path):
    tr = stable_trajectory(repro.hs, np.array([0.0, 0.1]), repro.riccati)
    tr.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "t,x1,x2_1,p1,p2_1,u_1,H,cost"
    sim = simulate_transverse(repro.tm, repro.cost.R, repro.feedback, np.array([0.0, 0.1]), 1.0)
    sim.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,x1,x2_1,u_1,dist,cost"


def test_feedback_table(repro):
    x1 = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    s = np.array([-0.1, 0.0, 0.1])
    fb = build_feedback_table(repro.hs, repro.riccati, x1, s, fallback=repro.feedback)
    row = fb.table.p0[2, 2]
    assert np.allclose(fb(x1[2], [0.1]), repro.hs.optimal_input(np.array([x1[2], 0.1]), row), atol=1e-10)
    assert np.allclose(fb(1.0, [0.0]), 0.0, atol=1e-8)
    assert np.allclose(fb(1.0, [0.3]), repro.feedback(1.0, [0.3]))


def test_feedback_table_needs_planar(osc3d):
    with pytest.raises(ValueError):
        build_feedback_table(osc3d.hs, osc3d.riccati, [0.0], [0.0])
