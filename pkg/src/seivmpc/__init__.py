"""Simulation and robust predictive control of networked SEIV epidemics.

Subpackages cover the exact stochastic process (``stochastic``), the
interval moment-closure dynamics (``closure``), the quarantine controller
(``empc``), convergence-bound calculators (``analysis``), and a command-line
front end (``cli``).  Shared graph/state types live in ``core``.
"""

from seivmpc.core import (
    S,
    E,
    I,
    V,
    COMPARTMENTS,
    SpreadingGraph,
    SpreadingParams,
    SystemState,
    MarginalVector,
    exposed_infected_count,
    frechet_lower,
    frechet_upper,
    erdos_renyi,
)

__all__ = [
    "S",
    "E",
    "I",
    "V",
    "COMPARTMENTS",
    "SpreadingGraph",
    "SpreadingParams",
    "SystemState",
    "MarginalVector",
    "exposed_infected_count",
    "frechet_lower",
    "frechet_upper",
    "erdos_renyi",
]

__version__ = "0.1.0"
