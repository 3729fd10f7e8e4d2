"""Economic model predictive control of the SEIV process via quarantines.

At every sampling time the controller observes the exact state, searches the
binary quarantine action space with a multi-start local descent, and applies
the cheapest action whose robust decay certificate holds.  The total
quarantine of all exposed/infected nodes serves as the always-feasible
auxiliary policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from seivmpc.closure import (
    BoundsTrajectory,
    ClosureKind,
    final_bounds,
    integrate_bounds,
    optimal_exposed_infected_upper,
)
from seivmpc.core import (
    E,
    I,
    SpreadingGraph,
    SpreadingParams,
    SystemState,
    exposed_infected_count,
)
from seivmpc.stochastic import EventTrajectory, simulate_path


@dataclass(frozen=True)
class Action:
    """Binary quarantine vector; 1 removes the node's outgoing influence."""

    quarantined: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quarantined, dtype=np.int8)
        if q.ndim != 1 or np.any((q != 0) & (q != 1)):
            raise ValueError("action entries must be 0 or 1")
        q.setflags(write=False)
        object.__setattr__(self, "quarantined", q)

    @property
    def n(self) -> int:
        return self.quarantined.shape[0]

    def without(self, i: int) -> "Action":
        q = self.quarantined.copy()
        q[i] = 0
        return Action(q)


def action_cost(a: Action) -> float:
    """Additive quarantine cost: number of quarantined nodes."""
    return float(a.quarantined.sum())


class ActionModel(Protocol):
    """Pluggable action-to-parameters map with an economic cost."""

    graph: SpreadingGraph

    def apply(self, a: Action) -> SpreadingParams: ...

    def cost(self, a: Action) -> float: ...


@dataclass(frozen=True)
class QuarantineMap:
    """Quarantine action model: a_j = 1 zeroes all exposure rates whose
    source is node j, removing its outgoing edges from the spreading graph."""

    graph: SpreadingGraph
    base_params: SpreadingParams

    def __post_init__(self):
        self.base_params.validate_for(self.graph)

    def apply(self, a: Action) -> SpreadingParams:
        return apply_action(self, a)

    def cost(self, a: Action) -> float:
        return action_cost(a)


def apply_action(qmap: QuarantineMap, a: Action) -> SpreadingParams:
    """Spreading parameters induced by a quarantine action."""
    if a.n != qmap.graph.n:
        raise ValueError("action dimension does not match graph")
    keep = 1.0 - a.quarantined[qmap.graph.edge_sources]
    base = qmap.base_params
    return SpreadingParams(
        alpha=base.alpha, xi=base.xi, delta=base.delta, eta=base.eta,
        beta=base.beta * keep, gamma=base.gamma * keep,
    )


@dataclass(frozen=True)
class ControllerConfig:
    """Decay target, sampling grid, and optimizer/integrator settings."""

    r: float                  # required decay rate (1/time)
    dt: float                 # sampling interval
    horizon: float            # total control duration
    k_max: int = 3            # sampled candidates per sampling time
    step_divisor: int = 64    # bound-integrator steps per sampling interval
    seed: int = 0
    stop_when_clear: bool = True  # stop once no node is exposed or infected

    def __post_init__(self):
        if self.r <= 0 or self.dt <= 0 or self.horizon < 0:
            raise ValueError("r and dt must be positive, horizon nonnegative")
        if self.k_max < 0 or self.step_divisor < 1:
            raise ValueError("k_max must be >= 0 and step_divisor >= 1")

    def sampling_times(self) -> np.ndarray:
        count = int(math.floor(self.horizon / self.dt - 1e-9)) + 1
        return np.arange(count) * self.dt


def stability_margin(graph: SpreadingGraph, qmap: QuarantineMap, a: Action,
                     state: SystemState, cfg: ControllerConfig) -> float:
    """Certified decay surplus of an action over one sampling interval.

    Integrates the refined bounds from the observed state under the acted
    parameters, takes the tightest exposed+infected upper bound at dt, and
    subtracts the decay target ell(state) * exp(-r dt).  A result <= 0
    certifies the true conditional expectation decays as required, because
    the bound over-approximates it.
    """
    params = qmap.apply(a)
    end = final_bounds(ClosureKind.REFINED, graph, params, state, cfg.dt,
                       cfg.step_divisor)
    ub = optimal_exposed_infected_upper(end)
    return ub - exposed_infected_count(state) * math.exp(-cfg.r * cfg.dt)


def total_quarantine_policy(state: SystemState) -> Action:
    """Quarantine exactly the exposed and infected nodes."""
    return Action(((state.codes == E) | (state.codes == I)).astype(np.int8))


def min_sampling_interval(params: SpreadingParams, r: float) -> float:
    """Smallest sampling interval for which the total quarantine policy is
    guaranteed to meet the decay target r."""
    delta, eta = params.delta, params.eta
    if np.any(delta == eta):
        raise ValueError(
            "unsupported: delta and eta must be distinct on every node")
    if not r < float(np.minimum(delta, eta).min()):
        raise ValueError("r must be below min{delta_i, eta_i} for every node")
    hi = np.maximum(delta, eta)
    lo = np.minimum(delta, eta)
    return float(np.max((np.log(hi) - np.log(np.abs(eta - delta))) / (lo - r)))


def analytic_quarantine_bounds(delta: float, eta: float, xE0: float,
                               xI0: float, t: float) -> tuple[float, float]:
    """Closed-form upper-bound solution for one fully quarantined node.

    Returns (xE(t), xE(t) + xI(t)) for the decoupled two-state linear system
    with exposure rates zeroed; requires eta != delta.
    """
    if eta == delta:
        raise ValueError("unsupported: eta must differ from delta")
    xE = xE0 * math.exp(-delta * t)
    total = (xI0 * math.exp(-eta * t)
             + (eta / (eta - delta)) * xE0 * math.exp(-delta * t)
             - (delta / (eta - delta)) * xE0 * math.exp(-eta * t))
    return xE, total


def sample_candidate_action(state: SystemState, rng: np.random.Generator,
                            p_active: float = 0.9,
                            p_idle: float = 0.1) -> Action:
    """Random action with full support over {0,1}^n, biased toward
    quarantining currently exposed/infected nodes."""
    active = (state.codes == E) | (state.codes == I)
    probs = np.where(active, p_active, p_idle)
    return Action((rng.random(state.n) < probs).astype(np.int8))


@dataclass
class DescentTelemetry:
    """Feasibility-evaluation accounting for one sampling period."""

    screen_evals: int = 0
    descent_evals: list[int] = field(default_factory=list)

    @property
    def total_evals(self) -> int:
        return self.screen_evals + sum(self.descent_evals)


def _multistart(graph: SpreadingGraph, qmap: QuarantineMap, state: SystemState,
                cfg: ControllerConfig, rng: np.random.Generator,
                feasibility: Callable[[Action], float] | None = None,
                telemetry: DescentTelemetry | None = None,
                ) -> tuple[Action, float | None]:
    if feasibility is None:
        def feasibility(a: Action) -> float:
            return stability_margin(graph, qmap, a, state, cfg)
    if telemetry is None:
        telemetry = DescentTelemetry()

    margins: dict[bytes, float] = {}

    def margin_of(a: Action) -> float:
        key = a.quarantined.tobytes()
        if key not in margins:
            margins[key] = feasibility(a)
        return margins[key]

    aux = total_quarantine_policy(state)
    candidates = [aux]
    for _ in range(cfg.k_max):
        a = sample_candidate_action(state, rng)
        telemetry.screen_evals += 1
        if margin_of(a) > 0.0:
            continue
        # Greedy single-node removals, ascending index.  A removal that was
        # infeasible once is not retried within the descent: dropping more
        # quarantines only increases exposure rates, so its margin cannot
        # recover.
        evals = 0
        failed: set[int] = set()
        improved = True
        while improved:
            improved = False
            for i in np.nonzero(a.quarantined)[0]:
                i = int(i)
                if i in failed:
                    continue
                trial = a.without(i)
                evals += 1
                if margin_of(trial) <= 0.0:
                    a = trial
                    improved = True
                    break
                failed.add(i)
        telemetry.descent_evals.append(evals)
        candidates.append(a)

    best = min(candidates, key=action_cost)
    return best, margins.get(best.quarantined.tobytes())


def multistart_local_descent(graph: SpreadingGraph, qmap: QuarantineMap,
                             state: SystemState, cfg: ControllerConfig,
                             rng: np.random.Generator,
                             feasibility: Callable[[Action], float] | None = None,
                             telemetry: DescentTelemetry | None = None) -> Action:
    """Suboptimal feasible quarantine action: the cheapest among the total
    quarantine fallback and up to k_max locally descended random samples."""
    action, _ = _multistart(graph, qmap, state, cfg, rng, feasibility, telemetry)
    return action


@dataclass
class ClosedLoopRecord:
    """Everything observed and decided during one closed-loop run."""

    trajectory: EventTrajectory
    actions: list[tuple[float, Action]]
    costs: list[tuple[float, float]]
    ell: list[tuple[float, int]]
    bound_upper: list[tuple[float, float]]   # optimal E+I upper bound at t+dt
    bound_traces: list[BoundsTrajectory]
    telemetry: list[DescentTelemetry]
    elimination_time: float | None


def run_closed_loop(graph: SpreadingGraph, qmap: QuarantineMap, x0: SystemState,
                    cfg: ControllerConfig, rng: np.random.Generator,
                    policy: str = "empc",
                    record_bounds: bool = False,
                    record_bound_upper: bool = True) -> ClosedLoopRecord:
    """Receding-horizon run: observe, optimize, apply, simulate, repeat.

    ``policy`` selects the EMPC optimizer or the total-quarantine baseline.
    Stops early once no node is exposed or infected (the disease-free set is
    absorbing) unless the config says to run out the horizon.
    """
    if policy not in ("empc", "total"):
        raise ValueError("policy must be 'empc' or 'total'")
    codes = x0.codes.copy()
    events: list[tuple[float, int, int, int]] = []
    actions: list[tuple[float, Action]] = []
    costs: list[tuple[float, float]] = []
    ell_log: list[tuple[float, int]] = []
    bound_upper: list[tuple[float, float]] = []
    traces: list[BoundsTrajectory] = []
    telemetry: list[DescentTelemetry] = []

    t = 0.0
    while t < cfg.horizon - 1e-9 * cfg.dt:
        state = SystemState(codes.copy())
        ell = exposed_infected_count(state)
        ell_log.append((t, ell))
        if ell == 0 and cfg.stop_when_clear:
            break
        tele = DescentTelemetry()
        if policy == "empc":
            action, margin = _multistart(graph, qmap, state, cfg, rng,
                                         telemetry=tele)
        else:
            action, margin = total_quarantine_policy(state), None
        telemetry.append(tele)
        actions.append((t, action))
        costs.append((t, qmap.cost(action)))

        params = qmap.apply(action)
        if record_bounds:
            trace = integrate_bounds(ClosureKind.REFINED, graph, params, state,
                                     cfg.dt, cfg.dt / cfg.step_divisor)
            traces.append(trace)
            margin = (optimal_exposed_infected_upper(trace.final())
                      - ell * math.exp(-cfg.r * cfg.dt))
        if record_bound_upper or record_bounds:
            if margin is None:
                margin = stability_margin(graph, qmap, action, state, cfg)
            bound_upper.append(
                (t + cfg.dt, margin + ell * math.exp(-cfg.r * cfg.dt)))

        seg = simulate_path(graph, params, state, cfg.dt, rng)
        for et, node, frm, to in seg.events:
            events.append((t + et, node, frm, to))
        codes = seg.final_state().codes.copy()
        t += cfg.dt

    if t >= cfg.horizon - 1e-9 * cfg.dt:
        ell_log.append((t, int(np.count_nonzero((codes == E) | (codes == I)))))
    trajectory = EventTrajectory(initial=x0, events=tuple(events))
    return ClosedLoopRecord(
        trajectory=trajectory, actions=actions, costs=costs, ell=ell_log,
        bound_upper=bound_upper, bound_traces=traces, telemetry=telemetry,
        elimination_time=trajectory.elimination_time(),
    )
