import dataclasses

import numpy as np
import pytest

from orbitstab.errors import EvaluatorFailure, ValidationFailure
from orbitstab.model import (ControlAffineSystem, CostSpec, PeriodicOrbit, get_example, make_mass_spring,
                             validate_problem)


def test_mass_spring_definition(mass_spring):
    p = mass_spring
    assert (p.system.n, p.system.m) == (2, 1)
    assert np.isclose(p.orbit.period, 2 * np.pi)
    assert np.allclose(p.orbit(0.0), [1.0, 0.0])
    assert p.cost.cost(np.array([1.0, 0.0])) == 0.0
    assert np.allclose(p.system.drift(np.array([0.0, -1.0])), [-1.0, 0.0])


@pytest.mark.parametrize("name", ["mass-spring", "oscillator-3d"])
def test_builtin_examples_validate(name):
    p = get_example(name)
    rep = validate_problem(p.system, p.cost, p.orbit)
    assert rep.passed, rep.failures()
    assert rep["orbit_is_trajectory"].residual < 1e-10
    assert rep["analytic_jacobians"].residual < 1e-6


def test_scaled_orbit_is_rejected(mass_spring):
    # every circle solves the oscillator, so the failure shows up in the cost
    orbit = PeriodicOrbit(1.1 * mass_spring.orbit.samples, mass_spring.orbit.period)
    rep = validate_problem(mass_spring.system, mass_spring.cost, orbit)
    assert not rep.passed
    assert not rep["q_zero_on_orbit"].passed


def test_orbit_with_wrong_period_is_rejected(mass_spring):
    orbit = PeriodicOrbit.from_function(lambda t: np.array([np.cos(2 * t), -np.sin(2 * t)]), np.pi)
    rep = validate_problem(mass_spring.system, mass_spring.cost, orbit)
    assert not rep["orbit_is_trajectory"].passed


@pytest.mark.parametrize("R", [[[0.0]], [[-1.0]]])
def test_degenerate_input_weight(mass_spring, R):
    cost = dataclasses.replace(mass_spring.cost, R=np.array(R))
    rep = validate_problem(mass_spring.system, cost, mass_spring.orbit)
    assert not rep["R_positive_definite"].passed
    with pytest.raises(ValidationFailure):
        rep.raise_if_failed()


def test_wrong_analytic_jacobian_is_caught(mass_spring):
    sys2 = dataclasses.replace(mass_spring.system, f_jac=lambda z: np.eye(2))
    rep = validate_problem(sys2, mass_spring.cost, mass_spring.orbit)
    assert not rep["analytic_jacobians"].passed


def test_evaluator_failures():
    bad = ControlAffineSystem(2, 1, f=lambda z: np.array([np.nan, 0.0]), g=lambda z: np.zeros((2, 1)))
    with pytest.raises(EvaluatorFailure):
        bad.drift(np.zeros(2))
    raising = CostSpec(q=lambda z: 1 / 0, R=np.eye(1))
    with pytest.raises(EvaluatorFailure):
        raising.cost(np.zeros(2))
    shape = ControlAffineSystem(2, 1, f=lambda z: np.zeros(3), g=lambda z: np.zeros((2, 1)))
    with pytest.raises(EvaluatorFailure):
        shape.drift(np.zeros(2))


def test_orbit_guards():
    with pytest.raises(ValidationFailure):
        PeriodicOrbit(np.zeros((4, 2)), 1.0)
    with pytest.raises(ValidationFailure):
        PeriodicOrbit(np.zeros((16, 1)), 1.0)
    with pytest.raises(ValidationFailure):
        get_example("no-such-problem")


def test_orbit_interpolant_and_csv(mass_spring, tmp_path):
    orbit = mass_spring.orbit
    assert np.allclose(orbit(orbit.nodes()), orbit.samples, atol=1e-14)
    assert np.allclose(orbit(orbit.period), orbit(0.0), atol=1e-14)
    assert np.allclose(orbit(0.4, 1), [-np.sin(0.4), -np.cos(0.4)], atol=1e-12)
    assert np.isclose(orbit.tube_radius(), 0.5, atol=1e-10)
    orbit.to_csv(tmp_path / "orbit.csv")
    back = PeriodicOrbit.from_csv(tmp_path / "orbit.csv")
    assert np.isclose(back.period, orbit.period)
    assert np.allclose(back.samples, orbit.samples)


def test_hessian_of_cost_on_orbit(mass_spring):
    for t in np.linspace(0, 6, 7):
        z = mass_spring.orbit(t)
        assert np.allclose(mass_spring.cost.hessian(z), 8 * np.outer(z, z), atol=1e-12)
