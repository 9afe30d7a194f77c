"""Solvers for differential quasivariational inequalities.

An ODE for a state ``x`` is coupled to a quasivariational inequality for
``u`` whose operator and nonsmooth term depend on ``x`` and on ``u``
itself.  The package provides the frozen-state solvers, explicit time
stepping, a one-dimensional viscoelastic contact rod, perturbation
families with convergence certificates, and a reduced-cost optimizer.
"""

from .errors import ConfigurationError, DqviError, InputError, NonConvergenceError, NotCertifiedError
from .integrator import DviProblem, Trajectory, integrate, observed_order, uniform_grid
from .rod import RodConfig, assemble, contact_diagnostics, state_derivative
from .space import Box, LinearMap, NodeUpperBound, Space, WholeSpace, inner, mosco_scale, project
from .vi import NonsmoothJ, OperatorA, QviConfig, equilibrium_residual, solve_qvi, solve_vi

__version__ = "0.1.0"

__all__ = [
    "Box", "ConfigurationError", "DqviError", "DviProblem", "InputError", "LinearMap", "NodeUpperBound",
    "NonConvergenceError", "NonsmoothJ", "NotCertifiedError", "OperatorA", "QviConfig", "RodConfig", "Space",
    "Trajectory", "WholeSpace", "assemble", "contact_diagnostics", "equilibrium_residual", "inner", "integrate",
    "mosco_scale", "observed_order", "project", "solve_qvi", "solve_vi", "state_derivative", "uniform_grid",
]
