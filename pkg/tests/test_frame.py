import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitstab.errors import NonOrientableFrame, OutOfTube
from orbitstab.frame import build_frame, check_transverse_model, from_transverse, to_transverse
from orbitstab.model import PeriodicOrbit, tube_samples


def test_mass_spring_frame_is_radial(generic):
    fr = generic.frame
    assert np.allclose(fr.e1[0], [0.0, -1.0], atol=1e-12)
    assert np.allclose(fr.Z[0][:, 0], [1.0, 0.0], atol=1e-12)
    for th in np.linspace(0, 2 * np.pi, 13):
        assert np.allclose(fr.Z_at(th)[:, 0], generic.orbit(th), atol=1e-10)


@pytest.mark.parametrize("fixture", ["generic", "osc3d"])
def test_frame_invariants(fixture, request):
    fr = request.getfixturevalue(fixture).frame
    res = fr.invariant_residuals()
    assert res["unit_tangent"] < 1e-10
    assert res["orthonormal"] < 1e-10
    assert res["tangent_perp"] < 1e-10
    assert res["closure"] < 1e-8
    assert np.allclose(fr.Z_at(fr.period), fr.Z_at(0.0), atol=1e-8)


def test_frame_in_three_dimensions(osc3d):
    fr = osc3d.frame
    orbit = osc3d.orbit
    for th in np.linspace(0, 2 * np.pi, 9):
        e1 = orbit(th, 1) / np.linalg.norm(orbit(th, 1))
        assert np.allclose(fr.e1_at(th), e1, atol=1e-10)
        Z = fr.Z_at(th)
        assert np.allclose(Z.T @ Z, np.eye(2), atol=1e-9)


def test_transverse_coordinates_mass_spring(generic):
    fr, orbit = generic.frame, generic.orbit
    x1, x2 = to_transverse(np.array([1.2, 0.0]), fr, orbit)
    assert abs(x1) < 1e-12 and np.allclose(x2, [0.2], atol=1e-12)
    assert np.allclose(from_transverse(0.0, [0.2], fr, orbit), [1.2, 0.0], atol=1e-12)
    assert np.allclose(from_transverse(2 * np.pi + 0.3, [0.1], fr, orbit), from_transverse(0.3, [0.1], fr, orbit))
    x1, x2 = to_transverse(orbit(1.7), fr, orbit)
    assert np.isclose(x1, 1.7, atol=1e-10) and np.allclose(x2, 0.0, atol=1e-10)


@pytest.mark.parametrize("fixture", ["generic", "osc3d"])
def test_roundtrip_on_tube_samples(fixture, request):
    pl = request.getfixturevalue(fixture)
    fr, orbit = pl.frame, pl.orbit
    pts = tube_samples(orbit, 0.9 * orbit.tube_radius(), 1000, np.random.default_rng(0))
    worst = 0.0
    for z in pts:
        x1, x2 = to_transverse(z, fr, orbit)
        back = from_transverse(x1, x2, fr, orbit)
        worst = max(worst, np.max(np.abs(back - z)))
        assert abs((z - orbit(x1)) @ orbit(x1, 1)) < 1e-9
    assert worst < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * np.pi, exclude_max=True), st.floats(-0.45, 0.45))
def test_roundtrip_property(generic, x1, x2):
    z = from_transverse(x1, [x2], generic.frame, generic.orbit)
    a, b = to_transverse(z, generic.frame, generic.orbit)
    assert abs(np.angle(np.exp(1j * (a - x1)))) < 1e-9
    assert abs(b[0] - x2) < 1e-9


def test_out_of_tube(generic):
    with pytest.raises(OutOfTube):
        to_transverse(np.array([3.0, 0.0]), generic.frame, generic.orbit)
    with pytest.raises(OutOfTube):
        to_transverse(np.array([1.6, 0.0]), generic.frame, generic.orbit)


@pytest.mark.parametrize("fixture", ["generic", "repro", "osc3d"])
def test_transverse_normal_form(fixture, request):
    tm = request.getfixturevalue(fixture).tm
    res = check_transverse_model(tm)
    assert res["f2_on_orbit"] < 1e-7
    assert res["df2_on_orbit"] < 1e-7
    assert res["x1_rate"] < 1e-7
    assert res["periodicity"] < 1e-8
    assert res["f1_ratio"] < 10.0


def test_generic_and_closed_form_agree_on_orbit(generic, repro):
    for t in np.linspace(0, 2 * np.pi, 17):
        x = np.array([t, 0.0])
        assert np.isclose(generic.tm.drift(x)[0], repro.tm.drift(x)[0])
        g_gen = generic.tm.input_matrix(x)[1, 0]
        g_cf = repro.tm.input_matrix(x)[1, 0]
        assert np.isclose(abs(g_gen), abs(g_cf), atol=1e-10)
        # frame-based model: chain rule gives g2 = -sin(x1)
        assert np.isclose(g_gen, -np.sin(t), atol=1e-10)


def test_closed_form_transverse_model(repro):
    tm = repro.tm
    x = np.array([0.7, 0.1])
    u = np.array([0.3])
    v = tm.velocity(x, u)
    assert np.allclose(v, [1 - np.cos(0.7) * 0.3, (2 * 0.1 + 1) * np.sin(0.7) * 0.3])
    assert np.isclose(tm.cost(x), 0.01)


@pytest.mark.parametrize("fixture", ["generic", "osc3d"])
def test_chain_rule_derivatives(fixture, request):
    from orbitstab._numdiff import gradient, jacobian
    tm = request.getfixturevalue(fixture).tm
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = np.concatenate([[rng.uniform(0, tm.period)], 0.2 * rng.standard_normal(tm.n - 1)])
        assert np.allclose(tm.drift_jacobian(x), jacobian(tm.drift, x), atol=1e-8)
        assert np.allclose(tm.input_jacobian(x), jacobian(tm.input_matrix, x), atol=1e-8)
        assert np.allclose(tm.cost_gradient(x), gradient(tm.cost, x), atol=1e-8)


@pytest.mark.parametrize("fixture", ["generic", "osc3d"])
def test_orbit_invariance_without_input(fixture, request):
    from scipy.integrate import solve_ivp
    tm = request.getfixturevalue(fixture).tm
    sol = solve_ivp(lambda t, x: tm.drift(x), (0, tm.period), tm.on_orbit(0.4), method="DOP853",
                    rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(sol.y[1:])) < 1e-7


def test_frame_csv(generic, tmp_path):
    generic.frame.to_csv(tmp_path / "frame.csv")
    header = (tmp_path / "frame.csv").read_text().splitlines()[0]
    assert header == "theta,e1_1,e1_2,Z_11,Z_21"


def test_frame_resolution_independent(mass_spring):
    a = build_frame(mass_spring.orbit, K=32)
    b = build_frame(mass_spring.orbit, K=128)
    assert np.allclose(a.Z_at(1.0), b.Z_at(1.0), atol=1e-10)


def test_undersampled_twisting_orbit_is_rejected():
    # the tangent turns too far between 8 nodes for the frame to follow it
    f = lambda t: np.array([np.cos(t) + 0.45 * np.cos(7 * t), np.sin(t) - 0.45 * np.sin(7 * t), 0.3 * np.sin(3 * t)])
    with pytest.raises(NonOrientableFrame):
        build_frame(PeriodicOrbit.from_function(f, 2 * np.pi, 8))
    build_frame(PeriodicOrbit.from_function(f, 2 * np.pi, 64))
