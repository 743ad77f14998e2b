"""Hamiltonian system in transverse coordinates and its stable manifold.

With ``F(x) = (1 + f1, A x2 + f2)``, ``Gm(x) = [g1; g2]`` and ``G = Gm^T p``::

    H(x, p) = p^T F(x) - 1/4 G^T R^-1 G + q(psi(x))
    x' =  dH/dp = F - 1/2 Gm R^-1 G
    p' = -dH/dx

The optimal input is ``u = -1/2 R^-1 G``. Trajectories on the stable
manifold of ``M = {x2 = 0, p = 0}`` are found by multiple shooting with the
terminal condition ``p1 = 0``, ``p2 = P(x1) x2`` from the periodic Riccati
solution ``P``.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import _numdiff
from .errors import (BvpDiverged, GradientMismatch, HorizonExceeded, IntegrationFailure,
                     OrbitStabError, OutOfTube, TubeExit)
from .frame import to_transverse

log = logging.getLogger(__name__)

H_TOL = 1e-6
BVP_TOL = 1e-8
RTOL = 1e-10
ATOL = 1e-10


class HamiltonianSystem:
    """Hamiltonian vector field built from a :class:`TransverseModel`."""

    def __init__(self, tm, R):
        self.tm = tm
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.Rinv = np.linalg.inv(self.R)
        self.n = tm.n
        self.m = tm.m
        self.period = tm.period
        self.tube_radius = tm.tube_radius

    def split(self, y):
        y = np.asarray(y, dtype=float)
        return y[: self.n], y[self.n:]

    def on_manifold(self, t):
        y = np.zeros(2 * self.n)
        y[0] = t
        return y

    def G(self, x, p):
        return self.tm.input_matrix(x).T @ p

    def H(self, y):
        x, p = self.split(y)
        G = self.G(x, p)
        return float(p @ self.tm.drift(x) - 0.25 * G @ self.Rinv @ G + self.tm.cost(x))

    def optimal_input(self, x, p):
        """``u = -1/2 R^-1 (g1^T p1 + g2^T p2)``."""
        return -0.5 * self.Rinv @ self.G(np.asarray(x, float), np.asarray(p, float))

    def vector_field(self, t, y):
        x, p = self.split(y)
        tm = self.tm
        Gm = tm.input_matrix(x)
        G = Gm.T @ p
        RG = self.Rinv @ G
        xdot = tm.drift(x) - 0.5 * Gm @ RG
        dGp = np.einsum("ami,a->mi", tm.input_jacobian(x), p)
        pdot = -tm.drift_jacobian(x).T @ p + 0.5 * dGp.T @ RG - tm.cost_gradient(x)
        return np.concatenate([xdot, pdot])

    def jacobian(self, y):
        return _numdiff.jacobian(lambda v: self.vector_field(0.0, v), y)

    def running_cost(self, y):
        x, p = self.split(y)
        u = self.optimal_input(x, p)
        return self.tm.cost(x) + float(u @ self.R @ u)


def symplectic_gradient_error(hs, n_points=100, seed=0, p_scale=1.0):
    """Max deviation between the vector field and ``J grad H`` (finite
    differences of ``H``) over random tube points, relative to ``1 + |X|``."""
    rng = np.random.default_rng(seed)
    n = hs.n
    r = 0.5 * min(hs.tube_radius, 1.0)
    worst = 0.0
    for _ in range(n_points):
        y = np.zeros(2 * n)
        y[0] = rng.uniform(0, hs.period)
        d = rng.standard_normal(n - 1)
        y[1:n] = d / np.linalg.norm(d) * rng.uniform(0, r)
        y[n:] = p_scale * rng.standard_normal(n)
        gH = _numdiff.gradient(hs.H, y)
        sg = np.concatenate([gH[n:], -gH[:n]])
        X = hs.vector_field(0.0, y)
        worst = max(worst, np.max(np.abs(X - sg)) / (1 + np.max(np.abs(X))))
    return float(worst)


def assemble_hamiltonian(tm, R, check=True, tol=1e-6, n_points=100, seed=0):
    """Hamiltonian system of ``tm`` with input weight ``R``.

    With ``check=True`` the vector field is compared with the symplectic
    gradient of ``H`` at ``n_points`` random tube points; a mismatch above
    ``tol`` raises :class:`GradientMismatch`.
    """
    R = getattr(R, "R", R)
    hs = HamiltonianSystem(tm, R)
    if check:
        err = symplectic_gradient_error(hs, n_points, seed)
        if err > tol:
            raise GradientMismatch(f"vector field differs from J grad H by {err:.3e}")
    return hs


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray          # (len(t), 2n)
    H: np.ndarray
    cost: np.ndarray       # accumulated running cost

    @property
    def max_H_drift(self):
        return float(np.max(np.abs(self.H - self.H[0])))


def _augmented(hs):
    def rhs(t, s):
        y = s[:-1]
        return np.append(hs.vector_field(t, y), hs.running_cost(y))
    return rhs


def _tube_event(hs):
    n = hs.n

    def event(t, s):
        return hs.tube_radius - np.linalg.norm(s[1:n])
    event.terminal = True
    event.direction = -1
    return event


def flow(hs, y0, t_span, t_eval=None, rtol=RTOL, atol=ATOL, check_tube=True):
    """Integrate the Hamiltonian flow from ``y0 = (x, p)``.

    Returns a :class:`Trajectory` with ``H`` and the accumulated running cost
    sampled at ``t_eval`` (or the solver's steps). Raises :class:`TubeExit`
    when ``|x2|`` reaches the tube radius.
    """
    s0 = np.append(np.asarray(y0, dtype=float), 0.0)
    events = [_tube_event(hs)] if check_tube and np.isfinite(hs.tube_radius) else None
    sol = solve_ivp(_augmented(hs), t_span, s0, method="DOP853", rtol=rtol, atol=atol,
                    t_eval=t_eval, events=events)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    if sol.status == 1:
        raise TubeExit(f"trajectory left the tube at t = {sol.t_events[0][0]:.6g}")
    Y = sol.y[:-1].T
    return Trajectory(sol.t, Y, np.array([hs.H(y) for y in Y]), sol.y[-1])


def _segment_end(hs, y0, t0, t1, rtol, atol):
    sol = solve_ivp(lambda t, y: hs.vector_field(t, y), (t0, t1), y0, method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    y1 = sol.y[:, -1]
    if not np.all(np.isfinite(y1)):
        raise IntegrationFailure("non-finite state")
    return y1


@dataclass
class ManifoldTrajectory:
    """One solution of the stable-manifold boundary value problem."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    H: np.ndarray
    running_cost: np.ndarray     # accumulated along t
    tail_cost: float             # 1/2 x2^T P x2 at the final time
    horizon: float
    boundary_residual: float
    iterations: int
    node_times: np.ndarray = field(repr=False, default=None)
    nodes: np.ndarray = field(repr=False, default=None)

    @property
    def p0(self):
        return self.p[0]

    @property
    def x0(self):
        return self.x[0]

    @property
    def cost(self):
        return float(self.running_cost[-1] + self.tail_cost)

    @property
    def max_abs_H(self):
        return float(np.max(np.abs(self.H)))

    @property
    def terminal_x2(self):
        return float(np.linalg.norm(self.x[-1, 1:]))

    def fiber_residual(self, riccati):
        x, p = self.x[-1], self.p[-1]
        return float(np.linalg.norm(p[1:] - riccati.P_at(x[0]) @ x[1:]))

    def to_csv(self, path):
        from .io import write_csv
        n = self.x.shape[1]
        m = self.u.shape[1]
        header = ["t", "x1"] + [f"x2_{i + 1}" for i in range(n - 1)]
        header += ["p1"] + [f"p2_{i + 1}" for i in range(n - 1)]
        header += [f"u_{i + 1}" for i in range(m)] + ["H", "cost"]
        write_csv(path, header, np.column_stack([self.t, self.x, self.p, self.u, self.H, self.running_cost]))


def _terminal(y, riccati, n):
    x, p = y[:n], y[n:]
    return np.concatenate([[p[0]], p[1:] - riccati.P_at(x[0]) @ x[1:]])


def _terminal_jac(y, riccati, n):
    x = y[:n]
    J = np.zeros((n, 2 * n))
    J[0, n] = 1.0
    J[1:, 0] = -riccati.P_at(x[0], 1) @ x[1:]
    J[1:, 1:n] = -riccati.P_at(x[0])
    J[1:, n + 1:] = np.eye(n - 1)
    return J


def _closed_loop_guess(hs, x0, riccati, times, rtol=1e-8):
    """Node guesses from the linear-fibre feedback ``p = (0, P x2)``."""
    n = hs.n

    def fibre(x):
        return np.concatenate([[0.0], riccati.P_at(x[0]) @ x[1:]])

    def rhs(t, x):
        p = fibre(x)
        return hs.tm.velocity(x, hs.optimal_input(x, p))

    sol = solve_ivp(rhs, (times[0], times[-1]), x0, method="DOP853", rtol=rtol, atol=1e-12,
                    t_eval=times)
    if not sol.success or sol.y.shape[1] != len(times):
        return np.array([np.concatenate([x0, fibre(x0)])] * len(times))
    return np.array([np.concatenate([x, fibre(x)]) for x in sol.y.T])


def _shoot(hs, x0, riccati, Tf, segments, guess_p0, guess_nodes, tol, maxiter, rtol, atol, fd_step):
    n = hs.n
    S = segments
    tau = np.linspace(0.0, Tf, S + 1)
    N2 = 2 * n
    nun = n + N2 * (S - 1)

    def unpack(z):
        ys = [np.concatenate([x0, z[:n]])]
        for j in range(S - 1):
            ys.append(z[n + N2 * j: n + N2 * (j + 1)])
        return ys

    def residual(z, want_jac=False):
        ys = unpack(z)
        r = np.empty(nun)
        J = np.zeros((nun, nun)) if want_jac else None
        for j in range(S):
            end = _segment_end(hs, ys[j], tau[j], tau[j + 1], rtol, atol)
            if want_jac:
                M = np.empty((N2, N2))
                for i in range(N2):
                    h = fd_step * (1 + abs(ys[j][i]))
                    yp = ys[j].copy()
                    yp[i] += h
                    M[:, i] = (_segment_end(hs, yp, tau[j], tau[j + 1], rtol, atol) - end) / h
            row = N2 * j
            if j < S - 1:
                r[row: row + N2] = end - ys[j + 1]
                if want_jac:
                    if j == 0:
                        J[row: row + N2, :n] = M[:, n:]
                    else:
                        c = n + N2 * (j - 1)
                        J[row: row + N2, c: c + N2] = M
                    c = n + N2 * j
                    J[row: row + N2, c: c + N2] = -np.eye(N2)
            else:
                r[row: row + n] = _terminal(end, riccati, n)
                if want_jac:
                    TM = _terminal_jac(end, riccati, n) @ M
                    if j == 0:
                        J[row: row + n, :n] = TM[:, n:]
                    else:
                        c = n + N2 * (j - 1)
                        J[row: row + n, c: c + N2] = TM
        return r, J

    z = np.concatenate([guess_p0] + [g for g in guess_nodes[1:S]])
    r, J = residual(z, True)
    norm = np.linalg.norm(r, np.inf)
    it = 0
    fresh = True    # J was evaluated at the current z; otherwise chord steps reuse it
    while norm > tol:
        if it >= maxiter:
            raise BvpDiverged(f"Newton did not converge: residual {norm:.3e} after {it} iterations")
        it += 1
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while True:
            try:
                r_new, _ = residual(z + lam * dz)
                n_new = np.linalg.norm(r_new, np.inf)
            except (IntegrationFailure, FloatingPointError):
                n_new = np.inf
            if n_new <= (1 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
            if lam < 1e-4:
                break
        if lam < 1e-4:
            if fresh:
                raise BvpDiverged(f"line search failed at residual {norm:.3e}")
            r, J = residual(z, True)
            fresh = True
            continue
        z = z + lam * dz
        if n_new <= tol:
            r, norm = r_new, n_new
            break
        if n_new < 0.1 * norm:
            r, norm, fresh = r_new, n_new, False
        else:
            r, J = residual(z, True)
            norm = np.linalg.norm(r, np.inf)
            fresh = True
    return tau, unpack(z), norm, it


def _horizon_periods(riccati, r0, x2_tol, T, max_periods):
    """Smallest power-of-two number of periods in which the linear closed
    loop would bring ``r0`` below ``x2_tol / 2``."""
    rho = float(np.max(np.abs(riccati.closed_loop.multipliers)))
    if r0 <= 0.5 * x2_tol or not 0 < rho < 1:
        return 1
    periods = np.log(0.5 * x2_tol / r0) / np.log(rho)
    k = 1
    while k < periods and 2 * k <= max_periods:
        k *= 2
    return k


def stable_trajectory(hs, x0, riccati, horizon=None, segments=8, max_periods=16,
                      x2_tol=1e-4, bvp_tol=BVP_TOL, maxiter=30, rtol=RTOL, atol=ATOL,
                      samples_per_segment=40, guess_p0=None, fd_step=1e-6):
    """Optimal trajectory from ``x0 = (x1, x2)`` on the stable manifold.

    Unknown ``p(0)``; terminal conditions ``p1(Tf) = 0`` and
    ``p2(Tf) = P(x1(Tf)) x2(Tf)``. Multiple shooting over ``segments``
    intervals with damped (Armijo) Newton, initial guess from the linear
    fibre. The horizon starts at ``horizon`` (default: the power-of-two number
    of periods the linear closed loop needs to reach ``x2_tol / 2``) and
    doubles, up to ``max_periods`` periods, until ``|x2(Tf)| < x2_tol``.
    Newton reuses its Jacobian while the residual drops tenfold per step.
    """
    x0 = np.asarray(x0, dtype=float)
    n = hs.n
    if np.linalg.norm(x0[1:]) > hs.tube_radius:
        raise OutOfTube("initial point outside the tube")
    T = hs.period
    if horizon is None:
        Tf = T * _horizon_periods(riccati, np.linalg.norm(x0[1:]), x2_tol, T, max_periods)
    else:
        Tf = float(horizon)
    p0 = (np.concatenate([[0.0], riccati.P_at(x0[0]) @ x0[1:]]) if guess_p0 is None
          else np.asarray(guess_p0, dtype=float))
    while True:
        tau = np.linspace(0.0, Tf, segments + 1)
        nodes = _closed_loop_guess(hs, x0, riccati, tau)
        tau, ys, res, iters = _shoot(hs, x0, riccati, Tf, segments, p0, nodes, bvp_tol, maxiter,
                                     rtol, atol, fd_step)
        p0 = ys[0][n:]
        end = _segment_end(hs, ys[-1], tau[-2], tau[-1], rtol, atol)
        if np.linalg.norm(end[1:n]) < x2_tol:
            break
        if Tf * 2 > max_periods * T * (1 + 1e-12):
            raise HorizonExceeded(f"|x2(Tf)| = {np.linalg.norm(end[1:n]):.3e} after {Tf / T:g} periods")
        Tf *= 2

    ts, Ys, Cs = [], [], []
    acc = 0.0
    for j in range(segments):
        te = np.linspace(tau[j], tau[j + 1], samples_per_segment + 1)
        tr = flow(hs, ys[j], (tau[j], tau[j + 1]), t_eval=te, rtol=rtol, atol=atol, check_tube=False)
        keep = slice(None) if j == segments - 1 else slice(0, -1)
        ts.append(tr.t[keep])
        Ys.append(tr.y[keep])
        Cs.append(tr.cost[keep] + acc)
        acc += tr.cost[-1]
    t = np.concatenate(ts)
    Y = np.concatenate(Ys)
    C = np.concatenate(Cs)
    X, Pm = Y[:, :n], Y[:, n:]
    U = np.array([hs.optimal_input(x, p) for x, p in zip(X, Pm)])
    Hs = np.array([hs.H(y) for y in Y])
    xf = X[-1]
    tail = 0.5 * float(xf[1:] @ riccati.P_at(xf[0]) @ xf[1:])
    return ManifoldTrajectory(t, X, Pm, U, Hs, C, tail, Tf, res, iters, tau, np.array(ys))


def perturbation_probe(hs, traj, riccati, delta=1e-3, n_dirs=20, seed=0, rtol=RTOL, atol=ATOL):
    """Local optimality probe around a converged trajectory.

    ``p(0)`` is perturbed by ``delta`` in ``n_dirs`` random unit directions and
    the Hamiltonian flow is integrated open loop over the same horizon. Each
    probe's cost is completed with the quadratic tail ``1/2 x2^T P x2``.
    Returns a list of ``(cost, terminal_residual)``; a probe that leaves the
    tube is recorded with infinite cost.
    """
    rng = np.random.default_rng(seed)
    n = hs.n
    out = []
    for _ in range(n_dirs):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        y0 = np.concatenate([traj.x0, traj.p0 + delta * v])
        try:
            tr = flow(hs, y0, (0.0, traj.horizon), rtol=rtol, atol=atol)
        except (TubeExit, IntegrationFailure):
            out.append((np.inf, np.inf))
            continue
        yf = tr.y[-1]
        xf = yf[:n]
        tail = 0.5 * float(xf[1:] @ riccati.P_at(xf[0]) @ xf[1:])
        res = float(np.linalg.norm(_terminal(yf, riccati, n)))
        out.append((float(tr.cost[-1] + tail), res))
    return out


@dataclass
class ValueTable:
    x1: np.ndarray
    s: np.ndarray                 # offsets along ``direction``
    direction: np.ndarray
    V: np.ndarray                 # (len(x1), len(s)), nan where the BVP failed
    p0: np.ndarray                # (len(x1), len(s), n)
    loop_residual: np.ndarray     # (len(x1), len(s))
    loop_size: tuple
    errors: dict = field(default_factory=dict)

    def to_csv(self, path):
        from .io import write_csv
        rows = []
        for i, a in enumerate(self.x1):
            for j, b in enumerate(self.s):
                rows.append([a, *(b * self.direction), self.V[i, j], self.loop_residual[i, j]])
        d = self.direction.size
        header = ["x1"] + [f"x2_{k + 1}" for k in range(d)] + ["V", "loop_residual"]
        write_csv(path, header, rows)


def value_and_lagrangian_diagnostic(hs, riccati, x1_values, s_values, direction=None,
                                    loop_size=(1e-2, 1e-2), **bvp_kwargs):
    """Sample ``V(x0)`` (BVP cost) on a grid and a closedness proxy for ``p``.

    For each grid point ``x0 = (x1, s * direction)`` a small rectangle with
    sides ``loop_size`` in the ``(x1, s)`` plane is traced through three more
    BVP solves; ``loop_residual = |circulation of p . dx| / area`` by the
    trapezoidal rule. A closed 1-form (Lagrangian graph) gives residuals that
    vanish with the loop size. Failed solves are recorded in ``errors``.
    """
    n = hs.n
    direction = np.eye(n - 1)[0] if direction is None else np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    x1_values = np.asarray(x1_values, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    V = np.full((x1_values.size, s_values.size), np.nan)
    P0 = np.full((x1_values.size, s_values.size, n), np.nan)
    L = np.full_like(V, np.nan)
    errors = {}
    h1, h2 = loop_size

    def solve(a, b, guess=None, horizon=None):
        x0 = np.concatenate([[a], b * direction])
        return stable_trajectory(hs, x0, riccati, guess_p0=guess, horizon=horizon, **bvp_kwargs)

    for i, a in enumerate(x1_values):
        for j, b in enumerate(s_values):
            try:
                base = solve(a, b)
                V[i, j] = base.cost
                P0[i, j] = base.p0
                corners = [base.p0]
                for da, db in ((h1, 0.0), (h1, h2), (0.0, h2)):
                    corners.append(solve(a + da, b + db, base.p0, base.horizon).p0)
                q = [np.array([c[0], c[1:] @ direction]) for c in corners]
                circ = (0.5 * (q[0][0] + q[1][0]) * h1 + 0.5 * (q[1][1] + q[2][1]) * h2
                        - 0.5 * (q[2][0] + q[3][0]) * h1 - 0.5 * (q[3][1] + q[0][1]) * h2)
                L[i, j] = abs(circ) / (h1 * h2)
            except OrbitStabError as exc:
                errors[(i, j)] = f"{type(exc).__name__}: {exc}"
    return ValueTable(x1_values, s_values, direction, V, P0, L, tuple(loop_size), errors)


class FeedbackTable:
    """Optimal feedback interpolated from BVP costates on an ``(x1, s)`` grid.

    ``p`` is interpolated with periodic cubic splines in ``x1`` and cubic
    splines in ``s`` (lower degree for short ``s`` grids); outside the tabulated ``s`` range the linear feedback
    ``fallback`` is used. Only ``n = 2`` (scalar ``x2``) is supported.
    """

    def __init__(self, hs, table, fallback=None):
        from scipy.interpolate import RectBivariateSpline
        if hs.n != 2:
            raise ValueError("feedback tables are implemented for n = 2 only")
        if np.isnan(table.p0).any():
            raise ValueError("table has failed grid points")
        self.hs = hs
        self.table = table
        self.fallback = fallback
        T = hs.period
        x1 = table.x1
        pad = 3
        xx = np.concatenate([x1[-pad:] - T, x1, x1[:pad] + T])
        ky = min(3, table.s.size - 1)
        if ky < 1:
            raise ValueError("need at least two offsets in the table")
        self._splines = []
        for k in range(2):
            vals = table.p0[:, :, k]
            vv = np.concatenate([vals[-pad:], vals, vals[:pad]])
            self._splines.append(RectBivariateSpline(xx, table.s, vv, kx=3, ky=ky))

    def __call__(self, x1, x2):
        s = float(np.atleast_1d(x2)[0])
        lo, hi = self.table.s[0], self.table.s[-1]
        if not lo <= s <= hi and self.fallback is not None:
            return self.fallback(x1, x2)
        a = float(np.mod(x1, self.hs.period))
        p = np.array([sp(a, s)[0, 0] for sp in self._splines])
        return self.hs.optimal_input(np.array([a, s]), p)


def build_feedback_table(hs, riccati, x1_values, s_values, fallback=None, **bvp_kwargs):
    """Solve the BVP on an ``(x1, s)`` grid (n = 2) and wrap the costates in a
    :class:`FeedbackTable`. Along each ``x1`` row the previous ``p(0)`` warm
    starts the next solve."""
    n = hs.n
    x1_values = np.asarray(x1_values, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    P0 = np.full((x1_values.size, s_values.size, n), np.nan)
    V = np.full((x1_values.size, s_values.size), np.nan)
    for i, a in enumerate(x1_values):
        guess = None
        for j, b in enumerate(s_values):
            tr = stable_trajectory(hs, np.array([a, b]), riccati, guess_p0=guess, **bvp_kwargs)
            P0[i, j] = tr.p0
            V[i, j] = tr.cost
            guess = tr.p0
    table = ValueTable(x1_values, s_values, np.ones(1), V, P0, np.full_like(V, np.nan), (0.0, 0.0))
    return FeedbackTable(hs, table, fallback)


@dataclass
class ClosedLoopTrajectory:
    t: np.ndarray
    state: np.ndarray     # z (original) or x (transverse), per sample
    x1: np.ndarray
    x2: np.ndarray        # (len(t), n - 1)
    u: np.ndarray
    cost: np.ndarray      # accumulated running cost

    @property
    def distance(self):
        return np.linalg.norm(self.x2, axis=1)

    @property
    def total_cost(self):
        return float(self.cost[-1])

    def to_csv(self, path):
        from .io import write_csv
        d = self.x2.shape[1]
        m = self.u.shape[1]
        header = ["t", "x1"] + [f"x2_{i + 1}" for i in range(d)] + [f"u_{i + 1}" for i in range(m)]
        header += ["dist", "cost"]
        write_csv(path, header, np.column_stack([self.t, self.x1, self.x2, self.u, self.distance, self.cost]))


def closed_loop_simulate(system, cost, orbit, frame, feedback, z0, duration, samples_per_period=40,
                         rtol=RTOL, atol=1e-12):
    """Simulate ``z' = f(z) + g(z) u`` with ``u = feedback(x1, x2)`` evaluated in
    transverse coordinates of ``frame``. Raises :class:`TubeExit` if the state
    leaves the tube."""
    radius = orbit.tube_radius()

    def u_of(z):
        try:
            x1, x2 = to_transverse(z, frame, orbit, radius)
        except OutOfTube as exc:
            raise TubeExit(str(exc)) from exc
        return np.atleast_1d(feedback(x1, x2)), x1, x2

    def rhs(t, s):
        z = s[:-1]
        u, _, _ = u_of(z)
        return np.append(system.velocity(z, u), cost.running(z, u))

    n_samples = max(2, int(np.ceil(duration / orbit.period * samples_per_period)) + 1)
    t_eval = np.linspace(0.0, duration, n_samples)
    sol = solve_ivp(rhs, (0.0, duration), np.append(np.asarray(z0, dtype=float), 0.0),
                    method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    Z = sol.y[:-1].T
    rec = [u_of(z) for z in Z]
    return ClosedLoopTrajectory(sol.t, Z, np.array([r[1] for r in rec]), np.array([r[2] for r in rec]),
                                np.array([r[0] for r in rec]), sol.y[-1])


def simulate_transverse(tm, R, feedback, x0, duration, samples_per_period=40, rtol=RTOL, atol=1e-12):
    """Closed loop directly in transverse coordinates ``x' = F(x) + Gm(x) u``."""
    R = np.atleast_2d(R)
    n = tm.n

    def rhs(t, s):
        x = s[:-1]
        u = np.atleast_1d(feedback(x[0], x[1:]))
        return np.append(tm.velocity(x, u), tm.cost(x) + float(u @ R @ u))

    def event(t, s):
        return tm.tube_radius - np.linalg.norm(s[1:n])
    event.terminal = True
    event.direction = -1

    n_samples = max(2, int(np.ceil(duration / tm.period * samples_per_period)) + 1)
    t_eval = np.linspace(0.0, duration, n_samples)
    events = [event] if np.isfinite(tm.tube_radius) else None
    sol = solve_ivp(rhs, (0.0, duration), np.append(np.asarray(x0, dtype=float), 0.0),
                    method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval, events=events)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    if sol.status == 1:
        raise TubeExit("closed loop left the tube")
    X = sol.y[:-1].T
    U = np.array([np.atleast_1d(feedback(x[0], x[1:])) for x in X])
    return ClosedLoopTrajectory(sol.t, X, X[:, 0], X[:, 1:], U, sol.y[-1])
