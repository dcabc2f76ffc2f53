"""Sampling and exact computation for Poisson ensembles of lattice loops.

The package samples loop soups restricted to finite boxes of Z^d, analyzes
the edge-percolation clusters they induce, and checks the sampled statistics
against closed-form identities (determinant avoidance probabilities,
negative-binomial occupation laws, Green-function expansions) and power-law
predictions (one-arm, two-point, cluster-tail exponents).
"""

__version__ = "0.1.0"

from .errors import ConfigError, GuardError, KernelError, LoopSoupError
from .lattice import LatticeSpec

__all__ = [
    "ConfigError",
    "GuardError",
    "KernelError",
    "LatticeSpec",
    "LoopSoupError",
    "__version__",
]
