"""Linear periodic systems: fundamental matrices, monodromy, gramians, NHIM check."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad, simpson, solve_ivp

from ._interp import TrigInterpolant
from .errors import IntegrationFailure, NotNormallyHyperbolic

EPS = 1e-4
GRAM_TOL = 1e-8
RTOL = 1e-10
ATOL = 1e-10
# Hamiltonian monodromies can be large; |Phi^T J Phi - J| grows like |Phi|^2.
HAM_TOL = 1e-13


def _as_function(M):
    if callable(M):
        return M
    M = np.asarray(M, dtype=float)
    return lambda t: M


def symplectic_form(d):
    """``J = [[0, I], [-I, 0]]`` of size ``2d``."""
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def fundamental_matrix(A, t0, t1, t_eval=None, rtol=RTOL, atol=ATOL, method="DOP853"):
    """Solve ``Phi' = A(t) Phi``, ``Phi(t0) = I`` and return ``Phi(t1, t0)``.

    With ``t_eval`` the result is an array ``(len(t_eval), d, d)`` of
    ``Phi(t_eval[i], t0)`` instead. ``t1 < t0`` integrates backward.
    """
    A = _as_function(A)
    d = np.atleast_2d(A(t0)).shape[0]
    if t1 == t0:
        return np.eye(d) if t_eval is None else np.broadcast_to(np.eye(d), (len(t_eval), d, d)).copy()

    def rhs(t, y):
        return (A(t) @ y.reshape(d, d)).ravel()

    sol = solve_ivp(rhs, (t0, t1), np.eye(d).ravel(), method=method, rtol=rtol, atol=atol,
                    t_eval=t_eval)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    if t_eval is None:
        return sol.y[:, -1].reshape(d, d)
    return sol.y.T.reshape(-1, d, d)


def classify(multipliers, eps=EPS):
    mod = np.abs(multipliers)
    return (int(np.sum(mod < 1 - eps)), int(np.sum(np.abs(multipliers - 1) <= eps)),
            int(np.sum(mod > 1 + eps)))


def reciprocal_residual(multipliers):
    """Max over multipliers of ``min_mu |lambda mu - 1|``."""
    lam = np.asarray(multipliers)
    return float(np.max(np.min(np.abs(np.outer(lam, lam) - 1), axis=1)))


@dataclass
class MonodromyReport:
    matrix: np.ndarray
    multipliers: np.ndarray
    period: float
    eps: float = EPS
    liouville_residual: float = np.nan
    symplectic_residual: Optional[float] = None
    reciprocal_residual: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_inside(self):
        return classify(self.multipliers, self.eps)[0]

    @property
    def n_unit(self):
        """Multipliers within ``eps`` of 1 (not merely of the unit circle)."""
        return classify(self.multipliers, self.eps)[1]

    @property
    def n_outside(self):
        return classify(self.multipliers, self.eps)[2]

    @property
    def exponents(self):
        return np.log(self.multipliers.astype(complex)) / self.period

    def to_dict(self):
        out = {
            "period": self.period,
            "multipliers": [{"re": float(z.real), "im": float(z.imag), "abs": float(abs(z))}
                            for z in self.multipliers],
            "inside": self.n_inside, "unit": self.n_unit, "outside": self.n_outside,
            "eps": self.eps,
            "liouville_residual": self.liouville_residual,
            "symplectic_residual": self.symplectic_residual,
            "reciprocal_residual": self.reciprocal_residual,
        }
        out.update(self.extra)
        return out


def _report(Phi, A, t0, T, eps, hamiltonian):
    lam = np.linalg.eigvals(Phi)
    lam = lam[np.argsort(np.abs(lam), kind="stable")]
    tr, _ = quad(lambda t: float(np.trace(A(t))), t0, t0 + T, limit=400, epsabs=1e-13, epsrel=1e-13)
    expected = np.exp(tr)
    liou = abs(np.linalg.det(Phi) - expected) / expected
    rep = MonodromyReport(Phi, lam, T, eps, float(liou))
    if hamiltonian:
        J = symplectic_form(Phi.shape[0] // 2)
        rep.symplectic_residual = float(np.max(np.abs(Phi.T @ J @ Phi - J)))
        rep.reciprocal_residual = reciprocal_residual(lam)
    return rep


def monodromy(A, T, t0=0.0, eps=EPS, hamiltonian=False, rtol=None, atol=None):
    """Monodromy ``Phi(t0 + T, t0)`` of ``x' = A(t) x`` with its multipliers.

    Set ``hamiltonian=True`` when ``A`` is a Hamiltonian matrix function to
    also record the symplectic and reciprocal-pair residuals; the default
    integration tolerance is then tightened to ``HAM_TOL``.
    """
    A = _as_function(A)
    default = HAM_TOL if hamiltonian else RTOL
    rtol = default if rtol is None else rtol
    atol = default if atol is None else atol
    Phi = fundamental_matrix(A, t0, t0 + T, rtol=rtol, atol=atol)
    return _report(Phi, A, t0, T, eps, hamiltonian)


def full_orbit_monodromy(hs, eps=EPS, N=256, rtol=HAM_TOL, atol=HAM_TOL):
    """Monodromy of the ``2n``-dimensional Hamiltonian flow linearized about
    the periodic solution ``(x1, x2, p) = (t, 0, 0)``.

    The Jacobian is sampled on ``N`` phases and interpolated
    trigonometrically. The report's ``extra`` carries the eigenvector test
    for the flow direction and the multiplicity of the unit multiplier.
    """
    T = hs.period
    ts = np.arange(N) * T / N
    jac = np.array([hs.jacobian(hs.on_manifold(t)) for t in ts])
    Ji = TrigInterpolant(jac, T)
    Phi = fundamental_matrix(Ji, 0.0, T, rtol=rtol, atol=atol)
    rep = _report(Phi, Ji, 0.0, T, eps, True)
    v = hs.vector_field(0.0, hs.on_manifold(0.0))
    rep.extra["tangent_eigvec_residual"] = float(np.linalg.norm(Phi @ v - v) / np.linalg.norm(v))
    rep.extra["unit_multiplicity"] = rep.n_unit
    return rep


def _simpson_nodes(t0, t1, n_nodes):
    n = max(int(n_nodes), 3)
    if n % 2 == 0:
        n += 1
    return np.linspace(t0, t1, n)


def controllability_gramian(A, B, t0, t1, n_nodes=257, rtol=RTOL, atol=ATOL):
    """``W_c = int_{t0}^{t1} Phi(t1, s) B(s) B(s)^T Phi(t1, s)^T ds`` (Simpson)."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    A, B = _as_function(A), _as_function(B)
    s = _simpson_nodes(t0, t1, n_nodes)
    Phis = fundamental_matrix(A, t0, t1, t_eval=s, rtol=rtol, atol=atol)
    Phi1 = Phis[-1]
    vals = []
    for sk, Pk in zip(s, Phis):
        M = Phi1 @ np.linalg.solve(Pk, np.atleast_2d(B(sk)).reshape(Pk.shape[0], -1))
        vals.append(M @ M.T)
    W = simpson(np.array(vals), x=s, axis=0)
    return 0.5 * (W + W.T)


def observability_gramian(C, A, t0, t1, n_nodes=257, rtol=RTOL, atol=ATOL):
    """``W_o = int_{t0}^{t1} Phi(s, t0)^T C(s)^T C(s) Phi(s, t0) ds`` (Simpson)."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    A, C = _as_function(A), _as_function(C)
    s = _simpson_nodes(t0, t1, n_nodes)
    Phis = fundamental_matrix(A, t0, t1, t_eval=s, rtol=rtol, atol=atol)
    vals = []
    for sk, Pk in zip(s, Phis):
        M = np.atleast_2d(C(sk)).reshape(-1, Pk.shape[0]) @ Pk
        vals.append(M.T @ M)
    W = simpson(np.array(vals), x=s, axis=0)
    return 0.5 * (W + W.T)


@dataclass
class GramianTest:
    """Outcome of a one-period gramian test.

    ``verified=False`` means "not verified by the gramian test", not a proof
    that the pair is unstabilizable (resp. undetectable).
    """

    verified: bool
    margin: float
    gramian: np.ndarray

    def __bool__(self):
        return self.verified

    def to_dict(self):
        return {"verified": self.verified, "margin": self.margin,
                "gramian": np.atleast_2d(self.gramian).tolist()}


def check_stabilizable(A, B, T, t0=0.0, gram_tol=GRAM_TOL, n_nodes=257):
    W = controllability_gramian(A, B, t0, t0 + T, n_nodes)
    margin = float(np.linalg.eigvalsh(W).min())
    return GramianTest(margin > gram_tol, margin, W)


def check_detectable(C, A, T, t0=0.0, gram_tol=GRAM_TOL, n_nodes=257):
    W = observability_gramian(C, A, t0, t0 + T, n_nodes)
    margin = float(np.linalg.eigvalsh(W).min())
    return GramianTest(margin > gram_tol, margin, W)


def psd_sqrt(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.maximum(w, 0))) @ V.T


def gramian_tests(lin, gram_tol=GRAM_TOL):
    """Stabilizability of ``(A, B2)`` and ``(A, Rbar^(1/2))``, detectability of
    ``(Q^(1/2), A)``, all by one-period gramians on the linearization grid."""
    n_nodes = lin.N + 1
    Rb = TrigInterpolant(np.array([psd_sqrt(M) for M in lin.Rbar]), lin.period)
    Qs = TrigInterpolant(np.array([psd_sqrt(M) for M in lin.Q]), lin.period)
    return {
        "stabilizable_B2": check_stabilizable(lin.A_at, lin.B2_at, lin.period, gram_tol=gram_tol, n_nodes=n_nodes),
        "stabilizable_Rbar": check_stabilizable(lin.A_at, Rb, lin.period, gram_tol=gram_tol, n_nodes=n_nodes),
        "detectable_Q": check_detectable(Qs, lin.A_at, lin.period, gram_tol=gram_tol, n_nodes=n_nodes),
    }


def original_gramian_tests(lin, gram_tol=GRAM_TOL):
    """The same tests on the original-coordinate triple ``(A0, B0, Q0)``.

    ``A0`` always carries the neutral flow direction, so these gramian tests
    can only pass when the input and cost reach that direction as well.
    """
    if lin.A0 is None:
        raise ValueError("linearization has no original-coordinate data")
    A0 = TrigInterpolant(lin.A0, lin.period)
    B0 = TrigInterpolant(lin.B0, lin.period)
    Q0 = TrigInterpolant(np.array([psd_sqrt(M) for M in lin.Q0]), lin.period)
    n_nodes = lin.N + 1
    return {
        "stabilizable_B0": check_stabilizable(A0, B0, lin.period, gram_tol=gram_tol, n_nodes=n_nodes),
        "detectable_Q0": check_detectable(Q0, A0, lin.period, gram_tol=gram_tol, n_nodes=n_nodes),
    }


@dataclass
class NhimReport:
    passed: bool
    dim_stable: int
    dim_unstable: int
    transverse: MonodromyReport
    stable_rate: float                   # alpha estimate: -log max|lambda_s| / T
    unstable_rate: float
    closed_loop_max: Optional[float] = None
    tangent_deviation: Optional[float] = None
    full: Optional[MonodromyReport] = None
    failures: list = field(default_factory=list)
    offending: Optional[complex] = None

    def require(self):
        if not self.passed:
            raise NotNormallyHyperbolic("; ".join(self.failures), self.offending)
        return self

    def to_dict(self):
        return {
            "passed": self.passed,
            "dim_stable": self.dim_stable,
            "dim_unstable": self.dim_unstable,
            "stable_rate": self.stable_rate,
            "unstable_rate": self.unstable_rate,
            "closed_loop_max_multiplier": self.closed_loop_max,
            "tangent_deviation": self.tangent_deviation,
            "failures": self.failures,
            "transverse_monodromy": self.transverse.to_dict(),
            "full_monodromy": None if self.full is None else self.full.to_dict(),
        }


def verify_nhim(lin, riccati=None, hs=None, eps=EPS):
    """Numerical normal-hyperbolicity check of ``M = {(gamma, p = 0)}``.

    Checks (i) the closed-loop matrix ``A - Rbar P`` of ``riccati`` has all
    multipliers inside the unit circle, (ii) the transverse Hamiltonian
    monodromy splits into ``d`` multipliers inside and ``d`` outside the unit
    circle (each at distance > ``eps``) and, when ``hs`` is given, that the
    full ``2n`` monodromy adds exactly two multipliers at 1; (iii) estimates
    the contraction/expansion rates from the multipliers nearest the circle.
    The constants of the invariant-manifold theorem are not computed.
    """
    d = lin.d
    trans = monodromy(lin.ham_at, lin.period, eps=eps, hamiltonian=True)
    lam = trans.multipliers
    mod = np.abs(lam)
    failures = []
    offending = None
    near = np.abs(mod - 1) <= eps
    if np.any(near):
        offending = complex(lam[np.argmax(near)])
        failures.append(f"transverse multiplier {offending:.6g} within {eps} of the unit circle")
    dim_s = int(np.sum(mod < 1 - eps))
    dim_u = int(np.sum(mod > 1 + eps))
    if dim_s != d or dim_u != d:
        failures.append(f"splitting dims (stable {dim_s}, unstable {dim_u}) != ({d}, {d})")
    stable = mod[mod < 1 - eps]
    unstable = mod[mod > 1 + eps]
    T = lin.period
    a_s = float(-np.log(stable.max()) / T) if stable.size else 0.0
    a_u = float(np.log(unstable.min()) / T) if unstable.size else 0.0

    cl_max = None
    if riccati is not None:
        cl = riccati.closed_loop.multipliers
        cl_max = float(np.max(np.abs(cl)))
        if cl_max >= 1:
            offending = complex(cl[np.argmax(np.abs(cl))])
            failures.append(f"closed-loop multiplier {offending:.6g} not inside the unit circle")

    full = None
    dev = None
    if hs is not None:
        full = full_orbit_monodromy(hs, eps=eps)
        ful = full.multipliers
        unit = ful[np.argsort(np.abs(ful - 1))[:2]]
        dev = float(np.max(np.abs(unit - 1)))
        fi, fu, fo = classify(ful, eps)
        if fu < 2 or fi != d or fo != d:
            failures.append(f"full monodromy split (inside {fi}, unit {fu}, outside {fo}) "
                            f"!= ({d}, 2, {d})")
    return NhimReport(not failures, dim_s, dim_u, trans, a_s, a_u, cl_max, dev, full, failures, offending)
