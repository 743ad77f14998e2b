"""Periodic linear data along the orbit.

Transverse data ``A(t)``, ``B2(t) = g2(t, 0)``, ``Q(t)`` (Hessian of the
transformed state cost in ``x2``) and ``Rbar = 1/2 B2 R^-1 B2^T``; plus the
original-coordinate triple ``A0 = Df(gamma)``, ``B0 = g(gamma)``,
``Q0 = d^2 q / dz^2 (gamma)``.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._interp import TrigInterpolant
from .errors import NonPSDHessian

log = logging.getLogger(__name__)

PSD_CLIP = 1e-6


def _clip_psd(Q, t):
    w, V = np.linalg.eigh(Q)
    if w.min() < -PSD_CLIP:
        raise NonPSDHessian(f"state-cost Hessian has eigenvalue {w.min():.3e} at t = {t:.6g}")
    if w.min() < 0:
        log.info("clipping Hessian eigenvalue %.3e to 0 at t = %.6g", w.min(), t)
        w = np.maximum(w, 0.0)
        Q = (V * w) @ V.T
    return Q


@dataclass(frozen=True)
class PeriodicLinearization:
    """Matrix-valued periodic functions sampled on ``t_k = k T / N``."""

    t: np.ndarray
    period: float
    A: np.ndarray       # (N, d, d), d = n - 1
    B2: np.ndarray      # (N, d, m)
    Q: np.ndarray       # (N, d, d)
    R: np.ndarray       # (m, m)
    A0: Optional[np.ndarray] = None
    B0: Optional[np.ndarray] = None
    Q0: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self):
        return self.t.size

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.B2.shape[2]

    @property
    def Rbar(self):
        if "Rbar" not in self._cache:
            Rinv = np.linalg.inv(self.R)
            self._cache["Rbar"] = 0.5 * np.einsum("kim,mn,kjn->kij", self.B2, Rinv, self.B2)
        return self._cache["Rbar"]

    def _interp(self, name):
        key = "interp_" + name
        if key not in self._cache:
            self._cache[key] = TrigInterpolant(getattr(self, name), self.period)
        return self._cache[key]

    def A_at(self, t):
        return self._interp("A")(t)

    def B2_at(self, t):
        return self._interp("B2")(t)

    def Q_at(self, t):
        return self._interp("Q")(t)

    def Rbar_at(self, t):
        return self._interp("Rbar")(t)

    @property
    def ham(self):
        """Samples of ``[[A, -Rbar], [-Q, -A^T]]``, shape ``(N, 2d, 2d)``."""
        if "ham" not in self._cache:
            top = np.concatenate([self.A, -self.Rbar], axis=2)
            bot = np.concatenate([-self.Q, -np.transpose(self.A, (0, 2, 1))], axis=2)
            self._cache["ham"] = np.concatenate([top, bot], axis=1)
        return self._cache["ham"]

    def ham_at(self, t):
        return self._interp("ham")(t)

    def periodicity_residual(self, funcs=("A", "B2", "Q")):
        """Max mismatch between the interpolant at ``T`` and the first sample."""
        return max(float(np.max(np.abs(self._interp(f)(self.period) - getattr(self, f)[0])))
                   for f in funcs)

    def to_csv(self, path):
        from .io import write_csv
        d, m = self.d, self.m
        header = ["t"]
        header += [f"A_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        header += [f"B2_{i + 1}{j + 1}" for i in range(d) for j in range(m)]
        header += [f"Q_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        N = self.N
        rows = np.column_stack([self.t, self.A.reshape(N, -1), self.B2.reshape(N, -1), self.Q.reshape(N, -1)])
        write_csv(path, header, rows)


def transverse_linearization(tm, R, N=256):
    """Sample ``A``, ``B2`` and ``Q`` of the transverse model ``tm``.

    ``Q`` is a second-order central difference Hessian (step ``1e-4``),
    symmetrized; eigenvalues in ``[-1e-6, 0)`` are clipped to zero, lower
    ones raise :class:`NonPSDHessian`.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    T = tm.period
    t = np.arange(N) * T / N
    d = tm.n - 1
    A = np.empty((N, d, d))
    B2 = np.empty((N, d, tm.m))
    Q = np.empty((N, d, d))
    for k, tk in enumerate(t):
        x = tm.on_orbit(tk)
        A[k] = tm.drift_jacobian(x)[1:, 1:]
        B2[k] = tm.input_matrix(x)[1:]
        Q[k] = _clip_psd(tm.cost_hessian_x2(tk), tk)
    return PeriodicLinearization(t, T, A, B2, Q, R)


def original_linearization(system, cost, orbit, N=256):
    """``(A0, B0, Q0)`` sampled along ``orbit`` on ``N`` uniform phases."""
    t = np.arange(N) * orbit.period / N
    A0 = np.empty((N, system.n, system.n))
    B0 = np.empty((N, system.n, system.m))
    Q0 = np.empty((N, system.n, system.n))
    for k, tk in enumerate(t):
        z = orbit(tk)
        A0[k] = system.drift_jacobian(z)
        B0[k] = system.input_matrix(z)
        H = cost.hessian(z)
        Q0[k] = 0.5 * (H + H.T)
    return A0, B0, Q0


def linearize(tm, system, cost, orbit, N=256):
    """Transverse and original-coordinate linearizations in one object."""
    lin = transverse_linearization(tm, cost.R, N)
    A0, B0, Q0 = original_linearization(system, cost, orbit, N)
    return PeriodicLinearization(lin.t, lin.period, lin.A, lin.B2, lin.Q, lin.R, A0, B0, Q0)
