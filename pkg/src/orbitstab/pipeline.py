"""Lazy chain of the analysis stages for one problem.

Each stage is computed on first access and cached, so callers that only
need the linearization never pay for the Riccati solve.
"""

from functools import cached_property

import numpy as np

from .floquet import gramian_tests, monodromy, original_gramian_tests, verify_nhim
from .frame import build_frame, transverse_dynamics
from .hamilton import assemble_hamiltonian
from .linearize import linearize, transverse_linearization
from .model import validate_problem
from .riccati import linear_feedback, solve_periodic_riccati

MODES = ("generic", "reproduction")


class Pipeline:
    """Analysis of an :class:`ExampleProblem`.

    ``mode="generic"`` builds the transverse model from the moving frame;
    ``mode="reproduction"`` uses the problem's closed-form transverse model
    for everything downstream of the frame.
    """

    def __init__(self, problem, mode="generic", N=256):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "reproduction" and problem.closed_form is None:
            raise ValueError(f"{problem.name} has no closed-form transverse model")
        self.problem = problem
        self.mode = mode
        self.N = int(N)

    @property
    def system(self):
        return self.problem.system

    @property
    def cost(self):
        return self.problem.cost

    @property
    def orbit(self):
        return self.problem.orbit

    @property
    def period(self):
        return self.orbit.period

    @cached_property
    def validation(self):
        return validate_problem(self.system, self.cost, self.orbit)

    @cached_property
    def frame(self):
        return build_frame(self.orbit, self.system)

    @cached_property
    def generic_model(self):
        return transverse_dynamics(self.system, self.cost, self.frame, self.orbit)

    @cached_property
    def tm(self):
        return self.problem.closed_form if self.mode == "reproduction" else self.generic_model

    @cached_property
    def lin(self):
        if self.mode == "reproduction":
            return transverse_linearization(self.tm, self.cost.R, self.N)
        return linearize(self.tm, self.system, self.cost, self.orbit, self.N)

    @cached_property
    def gramians(self):
        out = dict(gramian_tests(self.lin))
        if self.lin.A0 is not None:
            out.update({"original_" + k: v for k, v in original_gramian_tests(self.lin).items()})
        return out

    @cached_property
    def ham_monodromy(self):
        return monodromy(self.lin.ham_at, self.period, hamiltonian=True)

    @cached_property
    def riccati(self):
        return solve_periodic_riccati(self.lin)

    @cached_property
    def feedback(self):
        return linear_feedback(self.riccati, self.lin)

    @cached_property
    def hs(self):
        return assemble_hamiltonian(self.tm, self.cost.R)

    @cached_property
    def nhim(self):
        return verify_nhim(self.lin, self.riccati, self.hs)

    @cached_property
    def closed_loop_exponent(self):
        """Largest closed-loop Floquet exponent ``log max|lambda| / T``."""
        return float(np.log(np.max(np.abs(self.riccati.closed_loop.multipliers))) / self.period)
