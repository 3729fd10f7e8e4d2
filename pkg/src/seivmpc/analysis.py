"""Closed-form convergence-bound calculators and bootstrap statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def decay_envelope(ell0: int, r: float, t: float) -> float:
    """Guaranteed ceiling ell0 * exp(-r t) on the expected exposed+infected
    count at sampling times under a feasible controller."""
    if ell0 < 0 or r <= 0 or t < 0:
        raise ValueError("need ell0 >= 0, r > 0, t >= 0")
    return ell0 * math.exp(-r * t)


def tau_one(ell0: int, r: float, dt: float) -> float:
    """First sampling time at which the decay envelope drops below one.

    Natural logarithm; defined as 0 for a disease-free start so downstream
    formulas degrade gracefully.
    """
    if r <= 0 or dt <= 0:
        raise ValueError("r and dt must be positive")
    if ell0 < 0:
        raise ValueError("ell0 must be nonnegative")
    if ell0 <= 1:
        return 0.0
    ratio = math.log(ell0) / (r * dt)
    # absorb float noise when the ratio lands exactly on an integer
    return math.ceil(ratio - 1e-9) * dt


def elimination_time_bound(ell0: int, r: float, dt: float) -> float:
    """Upper bound on the expected elimination time:
    tau_1 + exp(-r tau_1) / (1 - exp(-r dt)) * dt * ell0."""
    t1 = tau_one(ell0, r, dt)
    return t1 + math.exp(-r * t1) / (1.0 - math.exp(-r * dt)) * dt * ell0


def survival_bound(ell0: int, r: float, dt: float, t: float) -> float:
    """Upper bound min{1, ell0 * exp(-r * floor(t/dt) * dt)} on the
    probability that any node is still exposed or infected at time t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if ell0 == 0:
        return 0.0
    return min(1.0, ell0 * math.exp(-r * math.floor(t / dt) * dt))


def bootstrap_mean_ci(samples: Sequence[float], level: float, resamples: int,
                      rng: np.random.Generator) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    data = np.asarray(samples, dtype=np.float64)
    if data.size == 0:
        raise ValueError("samples must be nonempty")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass
class EliminationStats:
    """Monte Carlo elimination times against the analytic bound."""

    elimination_times: list[float]
    bound: float
    mean: float = field(init=False)

    def __post_init__(self):
        if any(t < 0 for t in self.elimination_times):
            raise ValueError("elimination times must be nonnegative")
        self.mean = (float(np.mean(self.elimination_times))
                     if self.elimination_times else math.nan)

    def report(self, level: float = 0.98, resamples: int = 1000,
               rng: np.random.Generator | None = None) -> dict:
        rng = rng if rng is not None else np.random.default_rng(0)
        lo, hi = bootstrap_mean_ci(self.elimination_times, level, resamples, rng)
        return {
            "empirical_mean": self.mean,
            "elim_bound": self.bound,
            "ci": [lo, hi],
        }
