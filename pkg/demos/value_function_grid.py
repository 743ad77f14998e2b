"""Tabulate the optimal cost on a phase/offset grid and check that the
costates form a gradient field (small loop residuals).

    python3 demos/value_function_grid.py [N]     # N x N grid, default 4
"""

import sys

import numpy as np

from orbitstab import Pipeline, get_example, value_and_lagrangian_diagnostic

N = int(sys.argv[1]) if len(sys.argv) > 1 else 4
pl = Pipeline(get_example("mass-spring"), "reproduction")
x1 = np.arange(N) * pl.period / N
s = np.linspace(-0.3, 0.3, N)
table = value_and_lagrangian_diagnostic(pl.hs, pl.riccati, x1, s)

np.set_printoptions(precision=4, suppress=True)
print("V(x1, s):  rows are x1 =", np.round(x1, 3), " columns are s =", s)
print(table.V)
print("ratio V / (P s^2), near 1/2 for small s:")
P = np.array([pl.riccati.P_at(a)[0, 0] for a in x1])
with np.errstate(invalid="ignore", divide="ignore"):
    print(table.V / (P[:, None] * s[None, :] ** 2))
print("max loop residual:", np.nanmax(table.loop_residual))
if table.errors:
    print("failed grid points:", table.errors)
