import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitstab.errors import NotNormallyHyperbolic
from orbitstab.floquet import (check_detectable, check_stabilizable, classify, controllability_gramian,
                               full_orbit_monodromy, fundamental_matrix, monodromy, observability_gramian,
                               reciprocal_residual, symplectic_form, verify_nhim)
from orbitstab.linearize import PeriodicLinearization


def test_fundamental_matrix_closed_forms():
    assert np.allclose(fundamental_matrix(np.zeros((3, 3)), 0, 1), np.eye(3))
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(fundamental_matrix(rot, 0, 2 * np.pi), np.eye(2), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.5, 4.0))
def test_scalar_periodic_monodromy(a, b, T):
    # x' = (a + b cos(2 pi t / T)) x has multiplier exp(a T)
    rep = monodromy(lambda t: np.array([[a + b * np.cos(2 * np.pi * t / T)]]), T)
    assert np.isclose(rep.multipliers[0].real, np.exp(a * T), rtol=1e-8)
    assert rep.liouville_residual < 1e-5


def test_zero_and_stable_systems():
    rep = monodromy(np.zeros((2, 2)), 1.0)
    assert np.allclose(rep.multipliers, 1.0)
    assert rep.n_unit == 2
    rep = monodromy(lambda t: np.array([[-1.0, np.sin(t)], [0.0, -2.0]]), 2 * np.pi)
    assert np.all(np.abs(rep.multipliers) < 1)
    assert rep.n_inside == 2


def test_mass_spring_hamiltonian_monodromy(repro):
    rep = repro.ham_monodromy
    lam = np.sort(np.abs(rep.multipliers))
    assert np.all(np.abs(rep.multipliers.imag) < 1e-12)
    assert lam[0] < 1 < lam[1]
    assert abs(lam[0] * lam[1] - 1) < 1e-5
    assert rep.symplectic_residual < 1e-7
    assert rep.liouville_residual < 1e-5
    J = symplectic_form(1)
    for H in repro.lin.ham:
        assert np.allclose(J @ H + H.T @ J, 0.0, atol=1e-15)


@pytest.mark.parametrize("fixture", ["generic", "osc3d"])
def test_symplectic_and_reciprocal(fixture, request):
    rep = request.getfixturevalue(fixture).ham_monodromy
    assert rep.symplectic_residual < 1e-7
    assert rep.reciprocal_residual < 1e-5
    assert rep.liouville_residual < 1e-5


def test_full_orbit_monodromy(repro):
    rep = full_orbit_monodromy(repro.hs)
    lam = rep.multipliers
    assert rep.extra["unit_multiplicity"] >= 2
    assert rep.extra["tangent_eigvec_residual"] < 1e-5
    rest = np.sort(np.abs(lam[np.abs(lam - 1) > 1e-4]))
    trans = np.sort(np.abs(repro.ham_monodromy.multipliers))
    assert np.allclose(rest, trans, rtol=1e-5)


def test_full_orbit_monodromy_3d(osc3d):
    rep = full_orbit_monodromy(osc3d.hs)
    assert rep.extra["unit_multiplicity"] >= 2
    assert rep.n_inside == 2 and rep.n_outside == 2
    assert rep.reciprocal_residual < 1e-5


def test_gramians():
    W = controllability_gramian(np.zeros((1, 1)), lambda t: np.array([[np.sin(t) / np.sqrt(2)]]), 0, 2 * np.pi)
    assert abs(W[0, 0] - np.pi / 2) < 1e-6
    assert np.allclose(controllability_gramian(np.zeros((2, 2)), np.zeros((2, 1)), 0, 1), 0.0)
    assert np.allclose(controllability_gramian(np.zeros((2, 2)), np.eye(2), 0, 1), np.eye(2), atol=1e-12)
    Wo = observability_gramian(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [-1.0, 0.0]]), 0, np.pi)
    assert np.allclose(Wo, np.eye(2) * np.pi / 2, atol=1e-8)


def test_gramian_monotone_in_interval():
    A = lambda t: np.array([[0.1, 1.0], [-1.0, 0.0]])
    B = lambda t: np.array([[0.0], [np.cos(t)]])
    # reachability at a fixed endpoint grows as the start moves back
    W1 = controllability_gramian(A, B, 1.0, 3.0)
    W2 = controllability_gramian(A, B, 0.0, 3.0)
    assert np.linalg.eigvalsh(W2 - W1).min() >= -1e-9
    C = lambda t: np.array([[np.sin(t), 0.0]])
    O1 = observability_gramian(C, A, 0.0, 2.0)
    O2 = observability_gramian(C, A, 0.0, 3.0)
    assert np.linalg.eigvalsh(O2 - O1).min() >= -1e-9


def test_stabilizability_and_detectability_checks():
    res = check_stabilizable(np.zeros((1, 1)), lambda t: np.array([[np.sin(t) / np.sqrt(2)]]), 2 * np.pi)
    assert res and abs(res.margin - np.pi / 2) < 1e-6
    assert check_detectable(np.array([[np.sqrt(2.0)]]), np.zeros((1, 1)), 2 * np.pi)
    assert not check_stabilizable(np.array([[1.0]]), np.zeros((1, 1)), 1.0)


def test_gramian_gate_for_examples(repro, osc3d):
    for pl in (repro, osc3d):
        g = pl.gramians
        assert g["stabilizable_B2"] and g["stabilizable_Rbar"] and g["detectable_Q"]


def test_classify_and_reciprocal():
    lam = np.array([0.5, 2.0, 1.0 + 1e-6, 1.0])
    assert classify(lam, 1e-4) == (1, 2, 1)
    assert reciprocal_residual(np.array([0.25, 4.0])) < 1e-15


def test_nhim_mass_spring(repro):
    rep = verify_nhim(repro.lin, repro.riccati, repro.hs)
    assert rep.passed
    assert rep.dim_stable == rep.dim_unstable == 1
    assert rep.stable_rate > 0
    assert rep.tangent_deviation < 1e-4
    rep.require()


def test_nhim_fails_without_cost_or_control():
    t = np.arange(32) * 2 * np.pi / 32
    z = np.zeros((32, 1, 1))
    lin = PeriodicLinearization(t, 2 * np.pi, z, np.zeros((32, 1, 1)), z, np.eye(1))
    rep = verify_nhim(lin)
    assert not rep.passed
    with pytest.raises(NotNormallyHyperbolic) as info:
        rep.require()
    assert info.value.multiplier is not None
