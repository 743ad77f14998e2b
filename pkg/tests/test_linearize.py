import numpy as np
import pytest

from orbitstab.errors import NonPSDHessian
from orbitstab.frame import ClosedFormTransverseModel
from orbitstab.linearize import original_linearization, transverse_linearization


def test_mass_spring_transverse_data(repro):
    lin = repro.lin
    t = lin.t
    assert lin.N == 256
    assert np.allclose(lin.A, 0.0, atol=1e-12)
    assert np.allclose(lin.B2[:, 0, 0], np.sin(t), atol=1e-12)
    assert np.allclose(lin.Q, 2.0, atol=1e-7)
    assert np.allclose(lin.Rbar[:, 0, 0], 0.5 * np.sin(t) ** 2, atol=1e-12)
    assert np.allclose(np.sqrt(lin.Q), np.sqrt(2.0), atol=1e-7)


def test_hamiltonian_matrix_mass_spring(repro):
    t = repro.lin.t
    expected = np.zeros((t.size, 2, 2))
    expected[:, 0, 1] = -0.5 * np.sin(t) ** 2
    expected[:, 1, 0] = -2.0
    assert np.max(np.abs(repro.lin.ham - expected)) < 1e-8


def test_generic_mass_spring_data(generic):
    lin = generic.lin
    assert np.allclose(lin.A, 0.0, atol=1e-9)
    assert np.allclose(lin.B2[:, 0, 0], -np.sin(lin.t), atol=1e-10)
    assert np.allclose(lin.Q, 8.0, atol=1e-6)


def test_original_coordinates(generic):
    lin = generic.lin
    assert np.allclose(lin.A0, [[0, 1], [-1, 0]])
    assert np.allclose(lin.B0[:, :, 0], [0, 1])
    for k in range(0, lin.N, 17):
        z = generic.orbit(lin.t[k])
        assert np.allclose(lin.Q0[k], 8 * np.outer(z, z), atol=1e-12)


def test_zero_cost_gives_zero_Q0(mass_spring):
    import dataclasses
    cost = dataclasses.replace(mass_spring.cost, q=lambda z: 0.0, q_grad=None, q_hess=None)
    _, _, Q0 = original_linearization(mass_spring.system, cost, mass_spring.orbit, 16)
    assert np.allclose(Q0, 0.0, atol=1e-6)


@pytest.mark.parametrize("fixture", ["repro", "generic", "osc3d"])
def test_periodic_symmetric_psd(fixture, request):
    lin = request.getfixturevalue(fixture).lin
    assert lin.periodicity_residual(("A", "B2", "Q", "Rbar")) < 1e-8
    assert np.allclose(lin.Q, np.transpose(lin.Q, (0, 2, 1)))
    assert min(np.linalg.eigvalsh(Q).min() for Q in lin.Q) >= -1e-9
    assert min(np.linalg.eigvalsh(R).min() for R in lin.Rbar) >= -1e-12


def test_oscillator_is_time_varying(osc3d):
    A = osc3d.lin.A
    assert np.ptp(A[:, 0, 1]) > 0.5


def test_negative_cost_curvature_is_rejected():
    tm = ClosedFormTransverseModel(2, 1, 2 * np.pi, drift=lambda x: np.array([1.0, 0.0]),
                                   input_matrix=lambda x: np.array([[0.0], [1.0]]),
                                   cost=lambda x: -x[1] ** 2)
    with pytest.raises(NonPSDHessian):
        transverse_linearization(tm, np.eye(1), 32)


def test_linearization_csv(repro, tmp_path):
    repro.lin.to_csv(tmp_path / "lin.csv")
    lines = (tmp_path / "lin.csv").read_text().splitlines()
    assert lines[0] == "t,A_11,B2_11,Q_11"
    assert len(lines) == 257
