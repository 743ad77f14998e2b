"""Trigonometric interpolation of uniformly sampled periodic data."""

import numpy as np


class TrigInterpolant:
    """Periodic trigonometric interpolant through uniform samples.

    Parameters
    ----------
    values : (K, ...) array_like
        Samples at ``t_k = k * period / K``, ``k = 0..K-1``. Trailing axes are
        interpolated independently (so matrix-valued functions work).
    period : float
    """

    def __init__(self, values, period):
        values = np.asarray(values, dtype=float)
        self.period = float(period)
        self.K = values.shape[0]
        self.shape = values.shape[1:]
        flat = values.reshape(self.K, -1)
        coef = np.fft.rfft(flat, axis=0) / self.K
        weights = np.full(coef.shape[0], 2.0)
        weights[0] = 1.0
        if self.K % 2 == 0:
            weights[-1] = 1.0
        self._coef = coef * weights[:, None]
        self._k = np.arange(coef.shape[0])
        self._omega = 2.0 * np.pi / self.period

    def __call__(self, t, deriv=0):
        """Evaluate the interpolant (or its ``deriv``-th derivative) at ``t``."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t).ravel()
        kw = self._k * self._omega
        basis = np.exp(1j * np.outer(tt, kw))
        coef = self._coef
        if deriv:
            coef = coef * ((1j * kw) ** deriv)[:, None]
        out = (basis @ coef).real
        if scalar:
            return out[0].reshape(self.shape)
        return out.reshape(t.shape + self.shape)

    def jet(self, t, order=2):
        """Value and derivatives up to ``order`` at a scalar ``t``, sharing one basis."""
        kw = self._k * self._omega
        row = np.exp(1j * kw * float(t))
        out = []
        fac = np.ones_like(kw, dtype=complex)
        for _ in range(order + 1):
            out.append(((row * fac) @ self._coef).real.reshape(self.shape))
            fac = fac * (1j * kw)
        return out

    def nodes(self):
        return np.arange(self.K) * self.period / self.K


def spectral_derivative(values, period):
    """Derivative at the nodes of uniformly sampled periodic data."""
    values = np.asarray(values, dtype=float)
    interp = TrigInterpolant(values, period)
    return interp(interp.nodes(), deriv=1)
