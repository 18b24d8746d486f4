"""Numerics for optimal control of the regularized Kobayashi-Warren-Carter system.

Modules:

* :mod:`kwcopt.fem` - P1 grids, matrices, norms and time grids.
* :mod:`kwcopt.kernel` - regularized length kernel, nonlinearities, energy, box constraints.
* :mod:`kwcopt.state` - semi-implicit time stepping of the nonlinear state system.
* :mod:`kwcopt.linear` - the linear coupled system with a coefficient septuplet,
  its step-size bounds and stability diagnostics.
* :mod:`kwcopt.control` - cost, adjoint gradient, projected-gradient optimizer,
  eps-continuation.
* :mod:`kwcopt.oracles` - dense brute-force references used by the tests.
* :mod:`kwcopt.experiments`, :mod:`kwcopt.config`, :mod:`kwcopt.cli` - acceptance
  drivers, JSON configuration and the ``kwcopt`` command.
"""

__version__ = "0.1.0"

from .fem import TimeGrid, assemble_operators, build_grid
from .kernel import BoxConstraint, default_bundle, gamma_eps, grad_gamma_eps, hess_gamma_eps
from .params import ProblemParams, interval_embedding_constant
from .state import StateInstance, solve_state

__all__ = [
    "__version__",
    "BoxConstraint",
    "ProblemParams",
    "StateInstance",
    "TimeGrid",
    "assemble_operators",
    "build_grid",
    "default_bundle",
    "gamma_eps",
    "grad_gamma_eps",
    "hess_gamma_eps",
    "interval_embedding_constant",
    "solve_state",
]
