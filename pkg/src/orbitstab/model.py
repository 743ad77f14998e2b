"""Problem definition: control-affine plant, cost, periodic orbit.

A problem is the triple ``(ControlAffineSystem, CostSpec, PeriodicOrbit)``::

    dz/dt = f(z) + g(z) u,        J = int_0^inf q(z) + u^T R u dt

with the orbit a closed trajectory of the drift ``f``. Built-in examples are
available through :data:`EXAMPLES` / :func:`get_example`.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _numdiff
from ._interp import TrigInterpolant
from .errors import EvaluatorFailure, ValidationFailure

log = logging.getLogger(__name__)

ORBIT_TOL = 1e-8
JAC_TOL = 1e-6


def _checked(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise EvaluatorFailure(f"{name} returned shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise EvaluatorFailure(f"{name} returned non-finite values")
    return arr


@dataclass(frozen=True)
class ControlAffineSystem:
    """Plant ``dz/dt = f(z) + g(z) u`` with ``z`` in R^n and ``u`` in R^m.

    ``f_jac(z)`` must return ``(n, n)``; ``g_jac(z)`` returns ``(n, m, n)``
    with the differentiated coordinate last. Missing Jacobians fall back to
    fourth-order central differences.
    """

    n: int
    m: int
    f: Callable
    g: Callable
    f_jac: Optional[Callable] = None
    g_jac: Optional[Callable] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValidationFailure("state dimension must be at least 2")
        if self.m < 1:
            raise ValidationFailure("input dimension must be at least 1")

    def drift(self, z):
        try:
            out = self.f(np.asarray(z, dtype=float))
        except EvaluatorFailure:
            raise
        except Exception as exc:
            raise EvaluatorFailure(f"f raised {exc!r}") from exc
        return _checked(out, (self.n,), "f")

    def input_matrix(self, z):
        try:
            out = self.g(np.asarray(z, dtype=float))
        except Exception as exc:
            raise EvaluatorFailure(f"g raised {exc!r}") from exc
        return _checked(np.reshape(out, (self.n, self.m)), (self.n, self.m), "g")

    def drift_jacobian(self, z):
        if self.f_jac is not None:
            return _checked(self.f_jac(np.asarray(z, dtype=float)), (self.n, self.n), "f_jac")
        return _numdiff.jacobian(self.drift, z)

    def input_jacobian(self, z):
        if self.g_jac is not None:
            return _checked(self.g_jac(np.asarray(z, dtype=float)), (self.n, self.m, self.n), "g_jac")
        return _numdiff.jacobian(self.input_matrix, z)

    def velocity(self, z, u):
        return self.drift(z) + self.input_matrix(z) @ np.atleast_1d(u)


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``q(z) + u^T R u``."""

    q: Callable
    R: np.ndarray
    q_grad: Optional[Callable] = None
    q_hess: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))

    @property
    def m(self):
        return self.R.shape[0]

    def cost(self, z):
        try:
            v = self.q(np.asarray(z, dtype=float))
        except Exception as exc:
            raise EvaluatorFailure(f"q raised {exc!r}") from exc
        return float(_checked(v, (), "q"))

    def gradient(self, z):
        if self.q_grad is not None:
            return np.asarray(self.q_grad(np.asarray(z, dtype=float)), dtype=float)
        return _numdiff.gradient(self.cost, z)

    def hessian(self, z):
        if self.q_hess is not None:
            return np.asarray(self.q_hess(np.asarray(z, dtype=float)), dtype=float)
        return _numdiff.hessian(self.cost, z)

    def running(self, z, u):
        u = np.atleast_1d(u)
        return self.cost(z) + float(u @ self.R @ u)


class PeriodicOrbit:
    """Closed orbit sampled uniformly in time, with a trigonometric interpolant.

    Parameters
    ----------
    samples : (K, n) array_like
        ``gamma(k T / K)`` for ``k = 0..K-1`` (the endpoint is not repeated).
    period : float
        Period ``T`` in the plant's time units.
    """

    def __init__(self, samples, period):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2:
            raise ValidationFailure("orbit samples must be a (K, n) array")
        K, n = samples.shape
        if K < 8:
            raise ValidationFailure(f"need at least 8 orbit samples, got {K}")
        if n < 2:
            raise ValidationFailure("state dimension must be at least 2")
        if not period > 0:
            raise ValidationFailure("period must be positive")
        self.samples = samples
        self.samples.setflags(write=False)
        self.period = float(period)
        self._interp = TrigInterpolant(samples, period)

    @classmethod
    def from_function(cls, gamma, period, K=64):
        theta = np.arange(K) * period / K
        return cls(np.array([gamma(t) for t in theta]), period)

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def n(self):
        return self.samples.shape[1]

    @property
    def T(self):
        return self.period

    def nodes(self):
        return np.arange(self.K) * self.period / self.K

    def __call__(self, theta, deriv=0):
        return self._interp(theta, deriv)

    def jet(self, theta, order=2):
        """``[gamma, gamma', ...]`` up to ``order`` at a scalar phase."""
        return self._interp.jet(theta, order)

    def resample(self, K):
        return PeriodicOrbit(self(np.arange(K) * self.period / K), self.period)

    def curvature_radius(self, theta=None):
        """Radius of curvature ``|g'|^2 / |g''_perp|`` at ``theta`` (default: nodes)."""
        theta = self.nodes() if theta is None else np.atleast_1d(theta)
        d1 = self(theta, 1)
        d2 = self(theta, 2)
        speed2 = np.sum(d1 * d1, axis=-1)
        perp = d2 - (np.sum(d2 * d1, axis=-1) / speed2)[:, None] * d1
        kappa = np.linalg.norm(perp, axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(kappa > 0, speed2 / kappa, np.inf)

    def tube_radius(self):
        return 0.5 * float(np.min(self.curvature_radius()))

    def to_csv(self, path):
        from .io import write_csv
        header = ["theta"] + [f"z{i + 1}" for i in range(self.n)]
        write_csv(path, header, np.column_stack([self.nodes(), self.samples]))

    @classmethod
    def from_csv(cls, path, period=None):
        """Load ``theta,z1,...,zn`` samples. ``period`` defaults to a uniform-grid guess."""
        from .io import read_csv
        header, data = read_csv(path)
        if not header or header[0] != "theta":
            raise ValidationFailure(f"{path}: first column must be 'theta'")
        theta = data[:, 0]
        if period is None:
            period = theta[-1] + (theta[1] - theta[0])
        return cls(data[:, 1:], period)


@dataclass
class Check:
    name: str
    passed: bool
    residual: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name, passed, residual, detail=""):
        self.checks.append(Check(name, bool(passed), float(residual), detail))

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self):
        bad = self.failures()
        if bad:
            raise ValidationFailure("; ".join(f"{c.name}: {c.detail or c.residual}" for c in bad))

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [dict(name=c.name, passed=c.passed, residual=c.residual, detail=c.detail)
                       for c in self.checks],
        }


def tube_samples(orbit, radius, count, rng):
    """Random points ``gamma(theta) + r * v`` with ``v`` a unit normal and ``|r| <= radius``."""
    theta = rng.uniform(0, orbit.period, count)
    pts = []
    for th in theta:
        e1 = orbit(th, 1)
        e1 = e1 / np.linalg.norm(e1)
        v = rng.standard_normal(orbit.n)
        v -= (v @ e1) * e1
        v /= np.linalg.norm(v)
        pts.append(orbit(th) + rng.uniform(-radius, radius) * v)
    return np.array(pts)


def validate_problem(system, cost, orbit, orbit_tol=ORBIT_TOL, jac_tol=JAC_TOL,
                     n_probe=100, seed=0):
    """Check the standing assumptions on ``(system, cost, orbit)``.

    Returns a :class:`ValidationReport`; raises :class:`EvaluatorFailure`
    only when an evaluator itself misbehaves.
    """
    rep = ValidationReport()
    rng = np.random.default_rng(seed)

    if system.n != orbit.n:
        rep.add("dimensions", False, abs(system.n - orbit.n), "orbit and system dimensions differ")
        return rep
    if cost.m != system.m:
        rep.add("dimensions", False, abs(cost.m - system.m), "R and g input dimensions differ")
        return rep
    rep.add("dimensions", True, 0.0)

    R = cost.R
    asym = float(np.max(np.abs(R - R.T)))
    eig = np.linalg.eigvalsh(0.5 * (R + R.T))
    rep.add("R_symmetric", asym < 1e-12, asym)
    rep.add("R_positive_definite", eig.min() > 0, eig.min(), "" if eig.min() > 0 else "R not positive definite")

    theta = orbit.nodes()
    interp_err = float(np.max(np.abs(orbit(theta) - orbit.samples)))
    rep.add("interpolant_reproduces_samples", interp_err < 1e-10, interp_err)

    res, speeds, qvals, qgrads = [], [], [], []
    for th in theta:
        z = orbit(th)
        dz = orbit(th, 1)
        res.append(np.linalg.norm(dz - system.drift(z)))
        speeds.append(np.linalg.norm(dz))
        system.input_matrix(z)
        qvals.append(abs(cost.cost(z)))
        qgrads.append(np.linalg.norm(cost.gradient(z)))
    worst = max(res)
    rep.add("orbit_is_trajectory", worst < orbit_tol, worst,
            "" if worst < orbit_tol else "d gamma/d theta != f(gamma)")
    rep.add("orbit_regular", min(speeds) > 0, min(speeds))
    rep.add("q_zero_on_orbit", max(qvals) < orbit_tol, max(qvals))
    rep.add("q_gradient_zero_on_orbit", max(qgrads) < orbit_tol, max(qgrads))

    radius = orbit.tube_radius()
    if not np.isfinite(radius):
        radius = 1.0
    pts = tube_samples(orbit, radius, n_probe, rng)
    qmin = min(cost.cost(z) for z in pts)
    rep.add("q_nonnegative_in_tube", qmin >= -orbit_tol, qmin)

    if system.f_jac is not None or system.g_jac is not None:
        worst = 0.0
        for z in pts:
            if system.f_jac is not None:
                a = system.drift_jacobian(z)
                b = _numdiff.jacobian(system.drift, z)
                worst = max(worst, np.max(np.abs(a - b)) / (1 + np.max(np.abs(b))))
            if system.g_jac is not None:
                a = system.input_jacobian(z)
                b = _numdiff.jacobian(system.input_matrix, z)
                worst = max(worst, np.max(np.abs(a - b)) / (1 + np.max(np.abs(b))))
        rep.add("analytic_jacobians", worst < jac_tol, worst)
    return rep


@dataclass(frozen=True)
class ExampleProblem:
    name: str
    system: ControlAffineSystem
    cost: CostSpec
    orbit: PeriodicOrbit
    closed_form: Optional[object] = None  # TransverseModel for reproduction mode
    description: str = ""


def make_mass_spring(K=64):
    """Harmonic oscillator driven to the unit energy level.

    ``z1' = z2``, ``z2' = -z1 + u``, ``q = (z1^2 + z2^2 - 1)^2``, ``R = 1``.
    The orbit is the unit circle traversed clockwise from ``(1, 0)``,
    period ``2 pi``.

    The attached closed-form transverse model uses the published transformed
    equations ``x1' = 1 - cos(x1) u``, ``x2' = (2 x2 + 1) sin(x1) u`` with
    transformed state cost ``x2^2``.
    """
    from .frame import ClosedFormTransverseModel

    system = ControlAffineSystem(
        n=2, m=1,
        f=lambda z: np.array([z[1], -z[0]]),
        g=lambda z: np.array([[0.0], [1.0]]),
        f_jac=lambda z: np.array([[0.0, 1.0], [-1.0, 0.0]]),
        g_jac=lambda z: np.zeros((2, 1, 2)),
    )

    def q(z):
        return (z[0] ** 2 + z[1] ** 2 - 1.0) ** 2

    def q_grad(z):
        return 4.0 * (z @ z - 1.0) * z

    def q_hess(z):
        return 8.0 * np.outer(z, z) + 4.0 * (z @ z - 1.0) * np.eye(2)

    cost = CostSpec(q=q, R=np.array([[1.0]]), q_grad=q_grad, q_hess=q_hess)
    T = 2 * np.pi
    orbit = PeriodicOrbit.from_function(lambda t: np.array([np.cos(t), -np.sin(t)]), T, K)

    def input_matrix(x):
        return np.array([[-np.cos(x[0])], [(2 * x[1] + 1) * np.sin(x[0])]])

    def input_jacobian(x):
        J = np.zeros((2, 1, 2))
        J[0, 0, 0] = np.sin(x[0])
        J[1, 0, 0] = (2 * x[1] + 1) * np.cos(x[0])
        J[1, 0, 1] = 2 * np.sin(x[0])
        return J

    closed = ClosedFormTransverseModel(
        n=2, m=1, period=T,
        drift=lambda x: np.array([1.0, 0.0]),
        input_matrix=input_matrix,
        cost=lambda x: x[1] ** 2,
        drift_jacobian=lambda x: np.zeros((2, 2)),
        input_jacobian=input_jacobian,
        cost_gradient=lambda x: np.array([0.0, 2 * x[1]]),
        tube_radius=0.5,
    )
    return ExampleProblem("mass-spring", system, cost, orbit, closed,
                          "harmonic oscillator stabilized at unit energy")


def make_oscillator_3d(K=64, b=(0.0, 1.0, 0.5)):
    """Three-state example with a known circular orbit.

    ``z1' = z2``, ``z2' = -z1 + z1 z3``, ``z3' = -z3`` plus input direction
    ``b``; the unit circle in the ``z3 = 0`` plane is a period ``2 pi`` orbit.
    The ``z1 z3`` coupling makes the transverse linearization time varying.
    Cost ``q = (z1^2 + z2^2 - 1)^2 + z3^2``, ``R = 1``.
    """
    b = np.asarray(b, dtype=float).reshape(3, 1)

    def f(z):
        return np.array([z[1], -z[0] + z[0] * z[2], -z[2]])

    def f_jac(z):
        return np.array([[0.0, 1.0, 0.0], [-1.0 + z[2], 0.0, z[0]], [0.0, 0.0, -1.0]])

    system = ControlAffineSystem(n=3, m=1, f=f, g=lambda z: b.copy(), f_jac=f_jac,
                                 g_jac=lambda z: np.zeros((3, 1, 3)))

    def q(z):
        return (z[0] ** 2 + z[1] ** 2 - 1.0) ** 2 + z[2] ** 2

    def q_grad(z):
        r = z[0] ** 2 + z[1] ** 2 - 1.0
        return np.array([4 * r * z[0], 4 * r * z[1], 2 * z[2]])

    def q_hess(z):
        r = z[0] ** 2 + z[1] ** 2 - 1.0
        H = np.zeros((3, 3))
        H[:2, :2] = 8.0 * np.outer(z[:2], z[:2]) + 4 * r * np.eye(2)
        H[2, 2] = 2.0
        return H

    cost = CostSpec(q=q, R=np.array([[1.0]]), q_grad=q_grad, q_hess=q_hess)
    orbit = PeriodicOrbit.from_function(lambda t: np.array([np.cos(t), -np.sin(t), 0.0]), 2 * np.pi, K)
    return ExampleProblem("oscillator-3d", system, cost, orbit, None,
                          "planar oscillator with a damped, coupled third state")


EXAMPLES = {
    "mass-spring": make_mass_spring,
    "oscillator-3d": make_oscillator_3d,
}


def get_example(name, **kwargs):
    try:
        factory = EXAMPLES[name]
    except KeyError:
        raise ValidationFailure(f"unknown example {name!r}; known: {sorted(EXAMPLES)}") from None
    return factory(**kwargs)
