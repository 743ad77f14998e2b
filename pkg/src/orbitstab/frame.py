"""Moving orthonormal frame about the orbit and transverse coordinates.

Points near the orbit are written ``z = gamma(x1) + Z(x1) x2`` where ``x1``
is the phase (in the plant's time units, so ``x1' = 1`` on the orbit) and
``Z`` spans the orthogonal complement of the tangent. In these coordinates
the plant takes the normal form::

    x1' = 1 + f1(x1, x2) + g1(x1, x2) u
    x2' = A(x1) x2 + f2(x1, x2) + g2(x1, x2) u
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, logm

from . import _numdiff
from ._interp import TrigInterpolant
from .errors import NonOrientableFrame, OutOfTube, SingularJacobian

log = logging.getLogger(__name__)


def _gram_schmidt(vectors):
    """Orthonormalize columns in order; signs follow the input vectors."""
    q, r = np.linalg.qr(vectors)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def _initial_complement(e1, d2):
    """Orthonormal complement of ``e1`` whose first column points away from
    the centre of curvature (``d2`` is the second derivative of the orbit)."""
    n = e1.size
    cands = []
    perp = d2 - (d2 @ e1) * e1
    if np.linalg.norm(perp) > 1e-12:
        cands.append(-perp / np.linalg.norm(perp))
    cands.extend(np.eye(n))
    basis = [e1]
    for v in cands:
        w = v - sum((v @ b) * b for b in basis)
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            basis.append(w / nw)
        if len(basis) == n:
            break
    return np.column_stack(basis[1:])


@dataclass(frozen=True)
class MovingFrame:
    """Unit tangent ``e1`` and orthonormal complement ``Z`` at uniform phases."""

    theta: np.ndarray
    e1: np.ndarray        # (K, n)
    Z: np.ndarray         # (K, n, n-1)
    period: float
    holonomy: np.ndarray  # closing rotation removed during construction
    closure_error: float

    def __post_init__(self):
        object.__setattr__(self, "_Zi", TrigInterpolant(self.Z, self.period))
        object.__setattr__(self, "_ei", TrigInterpolant(self.e1, self.period))

    @property
    def n(self):
        return self.e1.shape[1]

    def Z_at(self, theta, deriv=0):
        return self._Zi(theta, deriv)

    def Z_jet(self, theta, order=2):
        return self._Zi.jet(theta, order)

    def e1_at(self, theta, deriv=0):
        return self._ei(theta, deriv)

    def invariant_residuals(self):
        """Worst-case violations of ``|e1| = 1``, ``Z^T Z = I``, ``e1^T Z = 0``."""
        k = self.n - 1
        unit = np.max(np.abs(np.linalg.norm(self.e1, axis=1) - 1))
        ortho = max(np.max(np.abs(Zk.T @ Zk - np.eye(k))) for Zk in self.Z)
        perp = max(np.max(np.abs(ek @ Zk)) for ek, Zk in zip(self.e1, self.Z))
        return {"unit_tangent": float(unit), "orthonormal": float(ortho),
                "tangent_perp": float(perp), "closure": float(self.closure_error)}

    def to_csv(self, path):
        from .io import write_csv
        n = self.n
        header = ["theta"] + [f"e1_{i + 1}" for i in range(n)]
        header += [f"Z_{i + 1}{j + 1}" for i in range(n) for j in range(n - 1)]
        rows = np.column_stack([self.theta, self.e1, self.Z.reshape(len(self.theta), -1)])
        write_csv(path, header, rows)


def build_frame(orbit, system=None, K=None, closure_tol=1e-8):
    """Construct a continuous periodic moving frame along ``orbit``.

    ``Z`` is carried from node to node by projecting onto the new tangent
    complement and re-orthonormalizing. For ``n >= 3`` the continued frame
    returns rotated by a holonomy ``O`` in SO(n-1); that rotation is spread
    uniformly over the period so the frame closes exactly. A reflection
    (``det O < 0``) or a failed closure raises :class:`NonOrientableFrame`.

    ``system`` is accepted for API symmetry; the frame depends on the orbit
    only.
    """
    if K is not None and K != orbit.K:
        if K < 8:
            raise ValueError("frame needs K >= 8 nodes")
        orbit = orbit.resample(K)
    K = orbit.K
    T = orbit.period
    theta = orbit.nodes()
    d1 = orbit(theta, 1)
    e1 = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
    d2 = orbit(theta, 2)
    n = orbit.n

    Z = np.empty((K, n, n - 1))
    Z[0] = _initial_complement(e1[0], d2[0])
    for k in range(1, K + 1):
        e = e1[k % K]
        prev = Z[k - 1]
        proj = prev - np.outer(e, e @ prev)
        nxt = _gram_schmidt(proj)
        if np.min(np.abs(np.sum(nxt * prev, axis=0))) < 0.5:
            raise NonOrientableFrame("frame continuation jumped between nodes; increase K")
        if k < K:
            Z[k] = nxt
        else:
            Z_end = nxt

    O = Z[0].T @ Z_end
    if np.linalg.det(O) < 0:
        raise NonOrientableFrame("frame returns with reversed orientation after one period")
    holonomy = O
    if n > 2 and np.max(np.abs(O - np.eye(n - 1))) > closure_tol:
        L = np.real(logm(O))
        L = 0.5 * (L - L.T)
        for k in range(K):
            Z[k] = Z[k] @ expm(-(k / K) * L)
        Z_end = Z_end @ expm(-L)
    closure = float(np.max(np.abs(Z_end - Z[0])))
    if closure > closure_tol:
        raise NonOrientableFrame(f"frame does not close: |Z(T) - Z(0)| = {closure:.3e}")
    return MovingFrame(theta, e1, Z, T, holonomy, closure)


def from_transverse(x1, x2, frame, orbit):
    """``z = gamma(x1) + Z(x1) x2``."""
    return orbit(x1) + frame.Z_at(x1) @ np.atleast_1d(np.asarray(x2, dtype=float))


def to_transverse(z, frame, orbit, tube_radius=None, tol=1e-13, maxiter=50):
    """Invert ``z = gamma(x1) + Z(x1) x2`` by Newton's method.

    Returns ``(x1, x2)`` with ``x1`` in ``[0, T)``. Raises :class:`OutOfTube`
    when ``z`` is farther than the tube radius from the orbit or Newton fails.
    """
    z = np.asarray(z, dtype=float)
    T = orbit.period
    if tube_radius is None:
        tube_radius = orbit.tube_radius()
    nodes = orbit.nodes()
    dist = np.linalg.norm(orbit.samples - z, axis=1)
    k = int(np.argmin(dist))
    if dist[k] > 1.5 * tube_radius:
        raise OutOfTube(f"point is {dist[k]:.3g} from the orbit, tube radius {tube_radius:.3g}")
    x1 = nodes[k]
    x2 = frame.Z_at(x1).T @ (z - orbit(x1))
    x = np.concatenate([[x1], x2])
    for _ in range(maxiter):
        Zx = frame.Z_at(x[0])
        r = orbit(x[0]) + Zx @ x[1:] - z
        if np.linalg.norm(r) < tol * (1 + np.linalg.norm(z)):
            break
        D = np.column_stack([orbit(x[0], 1) + frame.Z_at(x[0], 1) @ x[1:], Zx])
        try:
            x = x - np.linalg.solve(D, r)
        except np.linalg.LinAlgError as exc:
            raise OutOfTube("singular coordinate Jacobian during inversion") from exc
    else:
        raise OutOfTube("Newton inversion did not converge")
    if np.linalg.norm(x[1:]) > tube_radius:
        raise OutOfTube(f"|x2| = {np.linalg.norm(x[1:]):.3g} exceeds tube radius {tube_radius:.3g}")
    return float(np.mod(x[0], T)), x[1:]


class TransverseModel:
    """Plant expressed in transverse coordinates ``x = (x1, x2)``.

    Subclasses provide ``drift(x)`` (the full ``(1 + f1, A x2 + f2)``
    vector), ``input_matrix(x)`` (rows ``g1`` then ``g2``) and ``cost(x)``
    (``q`` composed with the coordinate map). Derivatives default to finite
    differences.
    """

    kind = "abstract"

    def __init__(self, n, m, period, tube_radius=np.inf):
        self.n = n
        self.m = m
        self.period = float(period)
        self.tube_radius = float(tube_radius)

    def drift_jacobian(self, x):
        return _numdiff.jacobian(self.drift, x)

    def input_jacobian(self, x):
        return _numdiff.jacobian(self.input_matrix, x)

    def cost_gradient(self, x):
        return _numdiff.gradient(self.cost, x)

    def cost_hessian_x2(self, x1, h=1e-4):
        x = np.zeros(self.n)
        x[0] = x1
        return _numdiff.hessian(self.cost, x, idx=range(1, self.n), h=h)

    def on_orbit(self, x1):
        x = np.zeros(self.n)
        x[0] = x1
        return x

    def A(self, x1):
        return self.drift_jacobian(self.on_orbit(x1))[1:, 1:]

    def f1(self, x):
        return self.drift(x)[0] - 1.0

    def f2(self, x):
        x = np.asarray(x, dtype=float)
        return self.drift(x)[1:] - self.A(x[0]) @ x[1:]

    def g1(self, x):
        return self.input_matrix(x)[0]

    def g2(self, x):
        return self.input_matrix(x)[1:]

    def velocity(self, x, u):
        return self.drift(x) + self.input_matrix(x) @ np.atleast_1d(u)


class ClosedFormTransverseModel(TransverseModel):
    """Transverse model given directly by formulas (reproduction mode)."""

    kind = "closed-form"

    def __init__(self, n, m, period, drift, input_matrix, cost, drift_jacobian=None,
                 input_jacobian=None, cost_gradient=None, tube_radius=np.inf):
        super().__init__(n, m, period, tube_radius)
        self._drift = drift
        self._input = input_matrix
        self._cost = cost
        self._drift_jac = drift_jacobian
        self._input_jac = input_jacobian
        self._cost_grad = cost_gradient

    def drift(self, x):
        return np.asarray(self._drift(np.asarray(x, dtype=float)), dtype=float)

    def input_matrix(self, x):
        return np.asarray(self._input(np.asarray(x, dtype=float)), dtype=float).reshape(self.n, self.m)

    def cost(self, x):
        return float(self._cost(np.asarray(x, dtype=float)))

    def drift_jacobian(self, x):
        if self._drift_jac is None:
            return super().drift_jacobian(x)
        return np.asarray(self._drift_jac(np.asarray(x, dtype=float)), dtype=float)

    def input_jacobian(self, x):
        if self._input_jac is None:
            return super().input_jacobian(x)
        return np.asarray(self._input_jac(np.asarray(x, dtype=float)), dtype=float)

    def cost_gradient(self, x):
        if self._cost_grad is None:
            return super().cost_gradient(x)
        return np.asarray(self._cost_grad(np.asarray(x, dtype=float)), dtype=float)


class FrameTransverseModel(TransverseModel):
    """Transverse model obtained by the chain rule through ``psi``.

    ``x' = Dpsi(x)^{-1} (f + g u)(psi(x))`` with
    ``Dpsi = [gamma'(x1) + Z'(x1) x2 | Z(x1)]``. First derivatives are exact
    given the plant Jacobians (analytic or finite-difference).
    """

    kind = "generic"

    def __init__(self, system, cost, frame, orbit, cond_max=1e10):
        super().__init__(system.n, system.m, orbit.period, orbit.tube_radius())
        self.system = system
        self.cost_spec = cost
        self.frame = frame
        self.orbit = orbit
        self.cond_max = cond_max
        self._memo = None   # (key, geometry) of the last evaluated point

    def _geom(self, x):
        """Coordinate map data at ``x``, cached for the most recent point."""
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        memo = self._memo
        if memo is not None and memo[0] == key:
            return memo[1]
        x1, x2 = x[0], x[1:]
        g0, g1, g2 = self.orbit.jet(x1, 2)
        Z0, Z1, Z2 = self.frame.Z_jet(x1, 2)
        n = self.n
        D = np.empty((n, n))
        D[:, 0] = g1 + Z1 @ x2
        D[:, 1:] = Z0
        try:
            Dinv = np.linalg.inv(D)
        except np.linalg.LinAlgError:
            raise SingularJacobian("coordinate map Jacobian is singular") from None
        if np.linalg.norm(D, 1) * np.linalg.norm(Dinv, 1) > self.cond_max:
            raise SingularJacobian("coordinate map Jacobian is numerically singular")
        dD = np.zeros((n, n, n))
        dD[:, 0, 0] = g2 + Z2 @ x2
        dD[:, 1:, 0] = Z1
        dD[:, 0, 1:] = Z1
        geom = {"z": g0 + Z0 @ x2, "D": D, "Dinv": Dinv, "dD": dD}
        self._memo = (key, geom)
        return geom

    def psi(self, x):
        return self._geom(x)["z"].copy()

    def dpsi(self, x):
        return self._geom(x)["D"].copy()

    def _dpsi_partials(self, x):
        """``d Dpsi / d x_i`` for each coordinate, shape ``(n, n, n)`` (last axis i)."""
        return self._geom(x)["dD"].copy()

    def drift(self, x):
        g = self._geom(x)
        return g["Dinv"] @ self.system.drift(g["z"])

    def input_matrix(self, x):
        g = self._geom(x)
        return g["Dinv"] @ self.system.input_matrix(g["z"])

    def cost(self, x):
        return self.cost_spec.cost(self._geom(x)["z"])

    def cost_gradient(self, x):
        g = self._geom(x)
        return g["D"].T @ self.cost_spec.gradient(g["z"])

    def drift_jacobian(self, x):
        g = self._geom(x)
        z, D, Dinv = g["z"], g["D"], g["Dinv"]
        F = Dinv @ self.system.drift(z)
        rhs = self.system.drift_jacobian(z) @ D - np.einsum("abi,b->ai", g["dD"], F)
        return Dinv @ rhs

    def input_jacobian(self, x):
        g = self._geom(x)
        z, D, Dinv = g["z"], g["D"], g["Dinv"]
        G = Dinv @ self.system.input_matrix(z)
        rhs = np.einsum("amk,ki->ami", self.system.input_jacobian(z), D) - np.einsum("abi,bm->ami", g["dD"], G)
        return np.einsum("ab,bmi->ami", Dinv, rhs)


def transverse_dynamics(system, cost, frame, orbit):
    """Transverse model of ``system`` built through ``frame`` (generic path)."""
    return FrameTransverseModel(system, cost, frame, orbit)


def check_transverse_model(tm, n_nodes=32, ray=1e-3, seed=0):
    """Numerical residuals of the normal-form properties of ``tm``.

    Returns a dict with ``f2_on_orbit`` (max ``|f2(x1, 0)|``), ``df2_on_orbit``
    (max ``|d f2/d x2 (x1, 0)|``, zero by construction of ``A``),
    ``x1_rate`` (max ``|x1' - 1|`` on the orbit), ``periodicity`` and
    ``f1_ratio`` (max ``|f1| / |x2|`` on short rays, which must stay bounded).
    """
    rng = np.random.default_rng(seed)
    T = tm.period
    nodes = np.arange(n_nodes) * T / n_nodes
    f2, rate, per, ratio, df2 = 0.0, 0.0, 0.0, 0.0, 0.0
    for x1 in nodes:
        x = tm.on_orbit(x1)
        F = tm.drift(x)
        f2 = max(f2, np.max(np.abs(F[1:])))
        rate = max(rate, abs(F[0] - 1.0))
        xs = x.copy()
        xs[0] += T
        per = max(per, np.max(np.abs(tm.drift(xs) - F)),
                  np.max(np.abs(tm.input_matrix(xs) - tm.input_matrix(x))),
                  np.max(np.abs(tm.A(x1 + T) - tm.A(x1))))
        d = rng.standard_normal(tm.n - 1)
        d *= ray / np.linalg.norm(d)
        xr = x.copy()
        xr[1:] = d
        ratio = max(ratio, abs(tm.f1(xr)) / ray)
        J = _numdiff.jacobian(lambda v: tm.f2(np.concatenate([[x1], v])), np.zeros(tm.n - 1))
        df2 = max(df2, np.max(np.abs(J)))
    return {"f2_on_orbit": float(f2), "df2_on_orbit": float(df2), "x1_rate": float(rate),
            "periodicity": float(per), "f1_ratio": float(ratio)}
