"""Orbital stabilization of periodic orbits by optimal transverse feedback.

The main entry points are re-exported here; see the README for a tour.
"""

from .errors import *  # noqa: F401,F403
from .model import (ControlAffineSystem, CostSpec, ExampleProblem, PeriodicOrbit, get_example,
                    validate_problem)
from .frame import build_frame, check_transverse_model, from_transverse, to_transverse, transverse_dynamics
from .linearize import PeriodicLinearization, linearize, original_linearization, transverse_linearization
from .floquet import (check_detectable, check_stabilizable, controllability_gramian, full_orbit_monodromy,
                      fundamental_matrix, monodromy, observability_gramian, verify_nhim)
from .riccati import backward_sweep, linear_feedback, solve_periodic_riccati
from .hamilton import (assemble_hamiltonian, closed_loop_simulate, flow, simulate_transverse,
                       stable_trajectory, value_and_lagrangian_diagnostic)
from .pipeline import Pipeline
from .sim import ExperimentPlan, decay_rate, run_plan

__version__ = "0.1.0"
