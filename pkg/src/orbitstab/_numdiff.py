"""Finite difference derivatives used when analytic ones are not supplied."""

import numpy as np


def default_step(x):
    return max(1e-5, 1e-5 * float(np.linalg.norm(x)))


def jacobian(fun, x, h=None):
    """Fourth-order central difference Jacobian of ``fun`` at ``x``.

    ``fun`` may return a scalar, vector or matrix; the differentiated axis is
    appended last, so a vector field gives ``(n_out, n_in)`` and a matrix
    field ``(r, c, n_in)``.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = default_step(x)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        d = (-np.asarray(fun(x + 2 * e)) + 8 * np.asarray(fun(x + e))
             - 8 * np.asarray(fun(x - e)) + np.asarray(fun(x - 2 * e))) / (12 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def gradient(fun, x, h=None):
    return jacobian(fun, x, h)


def hessian(fun, x, idx=None, h=1e-4):
    """Second-order central difference Hessian of scalar ``fun``.

    Only the coordinates listed in ``idx`` are perturbed (all by default).
    The result is symmetrized.
    """
    x = np.asarray(x, dtype=float)
    idx = list(range(x.size)) if idx is None else list(idx)
    k = len(idx)
    H = np.empty((k, k))
    f0 = float(fun(x))
    for a, i in enumerate(idx):
        ei = np.zeros_like(x)
        ei[i] = h
        H[a, a] = (float(fun(x + ei)) - 2 * f0 + float(fun(x - ei))) / h**2
        for b in range(a + 1, k):
            ej = np.zeros_like(x)
            ej[idx[b]] = h
            H[a, b] = H[b, a] = (float(fun(x + ei + ej)) - float(fun(x + ei - ej))
                                 - float(fun(x - ei + ej)) + float(fun(x - ei - ej))) / (4 * h**2)
    return 0.5 * (H + H.T)
