"""Robust interval moment-closure dynamics for the SEIV process.

Two ODE systems propagate per-node, per-compartment probability bounds from
a known initial state: a crude system built from the Fréchet joint-probability
bounds alone, and a refined system whose inflow terms are additionally capped
by complement bounds so every estimate stays inside [0, 1].
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from seivmpc import _kernels
from seivmpc.core import (
    SpreadingGraph,
    SpreadingParams,
    SystemState,
)

DEFAULT_ORDER_SLACK = 1e-6


class ClosureKind(enum.Enum):
    CRUDE = "crude"
    REFINED = "refined"


@dataclass(frozen=True)
class BoundsState:
    """Per-node, per-compartment probability bounds (columns S, E, I, V)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.ascontiguousarray(self.lower, dtype=np.float64)
        upper = np.ascontiguousarray(self.upper, dtype=np.float64)
        if lower.shape != upper.shape or lower.ndim != 2 or lower.shape[1] != 4:
            raise ValueError("bounds must both have shape (n, 4)")
        if np.any(lower > upper + DEFAULT_ORDER_SLACK):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def indicator_bounds(state: SystemState) -> BoundsState:
    """Degenerate bounds for a known state: lower = upper = indicator."""
    p = np.zeros((state.n, 4))
    p[np.arange(state.n), state.codes] = 1.0
    return BoundsState(lower=p, upper=p.copy())


def complement_bound(upper_self: float, y: float) -> float:
    """Cap an inflow term by the slack remaining under the upper bound."""
    return min(1.0 - float(upper_self), float(y))


def _csr_rates(graph: SpreadingGraph, params: SpreadingParams):
    params.validate_for(graph)
    return (graph.in_edge_ptr, graph.in_edge_src,
            np.ascontiguousarray(params.beta[graph.in_edge_order]),
            np.ascontiguousarray(params.gamma[graph.in_edge_order]))


def _rhs(graph: SpreadingGraph, params: SpreadingParams, state: BoundsState,
         refined: bool) -> tuple[np.ndarray, np.ndarray]:
    if state.n != graph.n:
        raise ValueError("bound state dimension does not match graph")
    ptr, src, beta, gamma = _csr_rates(graph, params)
    dlo = np.empty((graph.n, 4))
    dup = np.empty((graph.n, 4))
    _kernels.bounds_rhs(state.lower, state.upper, params.alpha, params.xi,
                        params.delta, params.eta, ptr, src, beta, gamma,
                        refined, dlo, dup)
    return dlo, dup


def crude_rhs(graph: SpreadingGraph, params: SpreadingParams,
              state: BoundsState) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives (d lower/dt, d upper/dt) of the crude Fréchet closure."""
    return _rhs(graph, params, state, refined=False)


def refined_rhs(graph: SpreadingGraph, params: SpreadingParams,
                state: BoundsState) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the refined closure with complement-capped inflows."""
    return _rhs(graph, params, state, refined=True)


@dataclass(frozen=True)
class BoundsTrajectory:
    """Fixed-grid trajectory of a bound state."""

    times: np.ndarray          # shape (T,)
    lower: np.ndarray          # shape (T, n, 4)
    upper: np.ndarray          # shape (T, n, 4)
    kind: ClosureKind

    def __len__(self) -> int:
        return self.times.shape[0]

    def at(self, k: int) -> BoundsState:
        return BoundsState(lower=self.lower[k].copy(), upper=self.upper[k].copy())

    def final(self) -> BoundsState:
        return self.at(len(self) - 1)


def _grid_steps(duration: float, step: float) -> int:
    if step <= 0:
        raise ValueError("step must be positive")
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    n_steps = int(round(duration / step))
    if abs(n_steps * step - duration) > 1e-6 * step:
        raise ValueError("duration must be an integer number of steps")
    return n_steps


def integrate_bounds(kind: ClosureKind, graph: SpreadingGraph,
                     params: SpreadingParams, x0: SystemState, duration: float,
                     step: float,
                     order_slack: float = DEFAULT_ORDER_SLACK) -> BoundsTrajectory:
    """Propagate bounds from the indicator of ``x0`` over a fixed step grid.

    Refined trajectories are clamped to [0, 1] after each step; a crossing of
    lower over upper beyond ``order_slack`` raises, it is never repaired.
    """
    if x0.n != graph.n:
        raise ValueError("initial state dimension does not match graph")
    n_steps = _grid_steps(duration, step)
    start = indicator_bounds(x0)
    lo = start.lower.copy()
    up = start.upper.copy()
    out_lo = np.empty((n_steps + 1, graph.n, 4))
    out_up = np.empty((n_steps + 1, graph.n, 4))
    ptr, src, beta, gamma = _csr_rates(graph, params)
    bad = _kernels.rk4_bounds(lo, up, params.alpha, params.xi, params.delta,
                              params.eta, ptr, src, beta, gamma,
                              kind is ClosureKind.REFINED, n_steps, step,
                              order_slack, True, out_lo, out_up)
    if bad:
        raise RuntimeError(
            f"bound ordering violated beyond slack at step {bad} (t={bad * step})")
    times = np.arange(n_steps + 1) * step
    return BoundsTrajectory(times=times, lower=out_lo, upper=out_up, kind=kind)


def final_bounds(kind: ClosureKind, graph: SpreadingGraph,
                 params: SpreadingParams, x0: SystemState, duration: float,
                 n_steps: int,
                 order_slack: float = DEFAULT_ORDER_SLACK) -> BoundsState:
    """Bound state after ``duration`` only, without storing the trajectory.

    Same scheme as :func:`integrate_bounds`; this is the hot path for
    controller feasibility evaluations.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    start = indicator_bounds(x0)
    lo = start.lower.copy()
    up = start.upper.copy()
    out_lo = np.empty((1, graph.n, 4))
    out_up = np.empty((1, graph.n, 4))
    ptr, src, beta, gamma = _csr_rates(graph, params)
    bad = _kernels.rk4_bounds(lo, up, params.alpha, params.xi, params.delta,
                              params.eta, ptr, src, beta, gamma,
                              kind is ClosureKind.REFINED, n_steps,
                              duration / n_steps, order_slack, False,
                              out_lo, out_up)
    if bad:
        raise RuntimeError(f"bound ordering violated beyond slack at step {bad}")
    return BoundsState(lower=out_lo[0], upper=out_up[0])


def optimal_exposed_infected_upper(state: BoundsState) -> float:
    """Tightest upper bound on the expected exposed+infected count that the
    interval state supports: sum of min{up_E + up_I, 1 - lo_S - lo_V}."""
    return float(_kernels.optimal_ei_upper(state.lower, state.upper))


def bounds_to_csv(traj: BoundsTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "node", "lo_S", "up_S", "lo_E", "up_E",
                         "lo_I", "up_I", "lo_V", "up_V"])
        for k in range(len(traj)):
            for i in range(traj.lower.shape[1]):
                row = [f"{traj.times[k]:.12g}", i]
                for c in range(4):
                    row.append(f"{traj.lower[k, i, c]:.12g}")
                    row.append(f"{traj.upper[k, i, c]:.12g}")
                writer.writerow(row)
