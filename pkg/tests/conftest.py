"""Shared oracle helpers for the test suite."""

import itertools

import numpy as np

from seivmpc import closure, core
from seivmpc.core import SpreadingParams, SystemState


def random_instance(entropy, n_lo=2, n_hi=5, rate_lo=0.05, rate_hi=3.5):
    """Seeded random graph, rates, and initial state for oracle checks."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    n = int(rng.integers(n_lo, n_hi + 1))
    graph = core.erdos_renyi(n, 0.6, int(rng.integers(0, 2 ** 31)))
    m = graph.n_edges

    def rates(size):
        return rng.uniform(rate_lo, rate_hi, size)

    params = SpreadingParams(alpha=rates(n), xi=rates(n), delta=rates(n),
                             eta=rates(n), beta=rates(m), gamma=rates(m))
    x0 = SystemState(rng.integers(0, 4, n).astype(np.int8))
    return graph, params, x0, rng


def random_bounds_state(rng, n):
    """Interval state guaranteed to contain a valid joint distribution."""
    p = rng.dirichlet(np.ones(4), size=n)
    lower = p * rng.random((n, 4))
    upper = p + (1 - p) * rng.random((n, 4))
    return closure.BoundsState(lower=lower, upper=upper)


def lp_vertex_optimum(state):
    """Exhaustive-vertex solution of the per-node linear programs:
    maximize y_E + y_I over [lower, upper] with sum(y) = 1, summed over
    nodes.  Independent of the package's closed-form evaluation."""
    total = 0.0
    for i in range(state.n):
        lo, up = state.lower[i], state.upper[i]
        best = -np.inf
        for free in range(4):
            others = [c for c in range(4) if c != free]
            for corner in itertools.product(*((lo[c], up[c]) for c in others)):
                y = np.empty(4)
                y[others] = corner
                y[free] = 1.0 - sum(corner)
                if lo[free] - 1e-12 <= y[free] <= up[free] + 1e-12:
                    best = max(best, y[core.E] + y[core.I])
        assert best > -np.inf, "interval state admits no distribution"
        total += best
    return total
