"""Periodic differential Riccati equation and the linear orbital feedback.

Solves::

    P' + A^T P + P A - P Rbar P + Q = 0,     P(t + T) = P(t)

for the periodic positive semi-definite solution that makes ``A - Rbar P``
asymptotically stable, with ``Rbar = 1/2 B2 R^-1 B2^T``. The factor 1/2 comes
from the ``1/4 G^T R^-1 G`` term of the Hamiltonian, so the stable fibres
of the linearized Hamiltonian flow are ``p2 = P x2`` and the associated
value function is ``V ~ 1/2 x2^T P x2``.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import schur

from ._interp import TrigInterpolant, spectral_derivative
from .errors import IntegrationFailure, NoStabilizingSolution, ResidualTooLarge
from .floquet import gramian_tests, monodromy

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
ASYM_TOL = 1e-6


@dataclass
class RiccatiSolution:
    t: np.ndarray
    period: float
    P: np.ndarray                 # (N, d, d)
    closed_loop: object           # MonodromyReport of A - Rbar P
    residual: np.ndarray          # per-node Frobenius norm
    periodicity_error: float
    method: str = "stable-subspace"
    verified: bool = True         # existence gate passed
    gate: dict = field(default_factory=dict)

    def __post_init__(self):
        self._interp = TrigInterpolant(self.P, self.period)

    def P_at(self, t, deriv=0):
        return self._interp(t, deriv)

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    @property
    def min_eig(self):
        return float(min(np.linalg.eigvalsh(Pk).min() for Pk in self.P))

    def to_dict(self):
        return {
            "method": self.method,
            "verified_existence": self.verified,
            "gate": {k: v.to_dict() for k, v in self.gate.items()},
            "closed_loop": self.closed_loop.to_dict(),
            "residual_max": self.max_residual,
            "residual_mean": float(np.mean(self.residual)),
            "periodicity_error": self.periodicity_error,
            "min_eigenvalue": self.min_eig,
        }

    def to_csv(self, path):
        from .io import write_csv
        d = self.P.shape[1]
        header = ["t"] + [f"P_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        write_csv(path, header, np.column_stack([self.t, self.P.reshape(len(self.t), -1)]))


def riccati_rhs(P, A, Rbar, Q):
    """``P'`` from the Riccati equation."""
    return -(A.T @ P + P @ A - P @ Rbar @ P + Q)


def riccati_residual(P, lin):
    """Per-node ``|P' + A^T P + P A - P Rbar P + Q|_F`` with ``P'`` spectral.

    ``P`` is either a :class:`RiccatiSolution` or an ``(N, d, d)`` array on
    the grid of ``lin``.
    """
    P = P.P if isinstance(P, RiccatiSolution) else np.asarray(P, dtype=float)
    dP = spectral_derivative(P, lin.period)
    out = np.empty(lin.N)
    for k in range(lin.N):
        A, Rb, Q = lin.A[k], lin.Rbar[k], lin.Q[k]
        out[k] = np.linalg.norm(dP[k] + A.T @ P[k] + P[k] @ A - P[k] @ Rb @ P[k] + Q)
    return out


def _stable_basis(Phi, d, subspace):
    if subspace == "schur":
        S, U, sdim = schur(Phi, output="real", sort="iuc")
        if sdim != d:
            raise NoStabilizingSolution(f"stable subspace has dimension {sdim}, expected {d}")
        return U[:, :d]
    if subspace == "eig":
        lam, V = np.linalg.eig(Phi)
        idx = np.where(np.abs(lam) < 1)[0]
        if idx.size != d:
            raise NoStabilizingSolution(f"stable subspace has dimension {idx.size}, expected {d}")
        cols = []
        for i in idx:
            v = V[:, i]
            cols.append(v.real)
            if abs(lam[i].imag) > 0:
                cols.append(v.imag)
        Q, R = np.linalg.qr(np.column_stack(cols))
        keep = np.abs(np.diag(R)) > 1e-12 * np.abs(R).max()
        basis = Q[:, keep]
        if basis.shape[1] != d:
            raise NoStabilizingSolution("could not form a real stable basis")
        return basis
    raise ValueError(f"unknown subspace method {subspace!r}")


def _basis_to_P(U, d):
    X, Y = U[:d], U[d:]
    if np.linalg.cond(X) > 1e12:
        raise NoStabilizingSolution("stable subspace is not a graph over x2 (X singular)")
    P = np.linalg.solve(X.T, Y.T).T
    asym = np.max(np.abs(P - P.T))
    if asym > ASYM_TOL * max(1.0, np.max(np.abs(P))):
        raise NoStabilizingSolution(f"P asymmetric by {asym:.3e}")
    return 0.5 * (P + P.T)


def solve_periodic_riccati(lin, subspace="schur", rtol=1e-12, atol=1e-12,
                           residual_tol=RESIDUAL_TOL, check_existence=True):
    """Stabilizing periodic solution by the stable-subspace method.

    1. Monodromy of ``Ham = [[A, -Rbar], [-Q, -A^T]]`` over one period.
    2. Ordered real Schur basis ``[X; Y]`` of the multipliers inside the unit
       circle (``subspace="eig"`` uses eigenvectors instead).
    3. ``P(T) = P(0) = Y X^-1``.
    4. The basis is carried backward in time node to node through ``Ham``,
       re-orthonormalized after each step; ``P(t_k) = Y X^-1``. Backward in
       time the stable subspace is the dominant one, so errors decay.

    Raises :class:`NoStabilizingSolution` or :class:`ResidualTooLarge`.
    """
    d = lin.d
    T = lin.period
    gate = {}
    verified = True
    if check_existence:
        gate = gramian_tests(lin)
        verified = bool((gate["stabilizable_B2"] or gate["stabilizable_Rbar"]) and gate["detectable_Q"])
        if not verified:
            warnings.warn("stabilizability/detectability not verified by the gramian test; "
                          "attempting the Riccati solve anyway", RuntimeWarning, stacklevel=2)

    ham = lin.ham_at
    mono = monodromy(ham, T, hamiltonian=True, rtol=rtol, atol=atol)
    U = _stable_basis(mono.matrix, d, subspace)
    P_T = _basis_to_P(U, d)

    def rhs(t, y):
        return (ham(t) @ y.reshape(2 * d, d)).ravel()

    N = lin.N
    grid = np.append(lin.t, T)
    P = np.empty((N, d, d))
    Y = U
    for k in range(N - 1, -1, -1):
        sol = solve_ivp(rhs, (grid[k + 1], grid[k]), Y.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationFailure(sol.message)
        Y, _ = np.linalg.qr(sol.y[:, -1].reshape(2 * d, d))
        P[k] = _basis_to_P(Y, d)

    per = float(np.max(np.abs(P[0] - P_T)))
    res = riccati_residual(P, lin)
    min_eig = min(np.linalg.eigvalsh(Pk).min() for Pk in P)
    if min_eig < -1e-8:
        raise NoStabilizingSolution(f"P is not positive semi-definite (eigenvalue {min_eig:.3e})")

    Pi = TrigInterpolant(P, T)
    cl = monodromy(lambda t: lin.A_at(t) - lin.Rbar_at(t) @ Pi(t), T, rtol=rtol, atol=atol)
    if np.max(np.abs(cl.multipliers)) >= 1:
        raise NoStabilizingSolution("closed loop A - Rbar P is not asymptotically stable")
    out = RiccatiSolution(lin.t.copy(), T, P, cl, res, per, f"stable-subspace/{subspace}", verified, gate)
    if out.max_residual > residual_tol:
        raise ResidualTooLarge(f"Riccati residual {out.max_residual:.3e} exceeds {residual_tol:.1e}")
    return out


def backward_sweep(lin, tol=1e-8, min_periods=20, max_periods=500, rtol=1e-12, atol=1e-12):
    """Reference solver: integrate the Riccati equation backward from ``P = 0``.

    Runs at least ``min_periods`` periods and until period-to-period changes
    fall below ``tol``; returns ``P`` on the grid of ``lin``. Slow but
    independent of the subspace construction.
    """
    d = lin.d
    T = lin.period
    ham = lin.ham_at

    def rhs(t, y):
        H = ham(t)
        P = y.reshape(d, d)
        return riccati_rhs(P, H[:d, :d], -H[:d, d:], -H[d:, :d]).ravel()

    P = np.zeros((d, d))
    for k in range(max_periods):
        sol = solve_ivp(rhs, (T, 0.0), P.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationFailure(sol.message)
        new = sol.y[:, -1].reshape(d, d)
        change = np.max(np.abs(new - P))
        P = new
        if k + 1 >= min_periods and change < tol:
            break
    else:
        raise NoStabilizingSolution("backward sweep did not converge")
    t_eval = np.append(lin.t, T)[::-1]
    sol = solve_ivp(rhs, (T, 0.0), P.ravel(), method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    vals = sol.y.T[::-1][:-1].reshape(-1, d, d)
    return 0.5 * (vals + np.transpose(vals, (0, 2, 1)))


class LinearFeedback:
    """``u(x1, x2) = K(x1) x2`` with ``K(t) = -1/2 R^-1 B2(t)^T P(t)``.

    Obtained from the minimizing input with ``p1 = 0`` and ``p2 = P x2``.
    """

    def __init__(self, sol, lin):
        Rinv = np.linalg.inv(lin.R)
        self.t = lin.t
        self.period = lin.period
        self.K = -0.5 * np.einsum("mn,kin,kij->kmj", Rinv, lin.B2, sol.P)
        self._interp = TrigInterpolant(self.K, lin.period)

    def gain(self, t):
        return self._interp(t)

    def __call__(self, x1, x2):
        return self.gain(x1) @ np.atleast_1d(x2)


def linear_feedback(sol, lin):
    return LinearFeedback(sol, lin)
