"""Three-dimensional example: two transverse directions, time-varying A(t).

    python3 demos/oscillator_3d.py
"""

import numpy as np

from orbitstab import Pipeline, get_example, stable_trajectory

pl = Pipeline(get_example("oscillator-3d"))
print("validation passed:", pl.validation.passed)
print("transverse multipliers (Hamiltonian):", np.round(np.abs(pl.ham_monodromy.multipliers), 5))
print("symplectic residual:", pl.ham_monodromy.symplectic_residual)
print("Riccati residual:", pl.riccati.max_residual)
print("P(0) =\n", pl.riccati.P[0])
nh = pl.nhim
print(f"normally hyperbolic: {nh.passed}, contraction rate {nh.stable_rate:.3f}")

x0 = np.array([0.0, 0.1, -0.05])
tr = stable_trajectory(pl.hs, x0, pl.riccati)
print(f"optimal cost from {x0[1:]}: {tr.cost:.6f} "
      f"(quadratic estimate {0.5 * x0[1:] @ pl.riccati.P[0] @ x0[1:]:.6f}), max |H| {tr.max_abs_H:.1e}")
