"""Exact simulation of the continuous-time SEIV chain.

Two views of the same process: statistically exact sample paths via the
Gillespie direct method, and exact marginals via the Kolmogorov forward
equation on the full 4^n joint state space (small graphs only, used as the
ground-truth oracle).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from seivmpc.core import (
    COMPARTMENTS,
    E,
    I,
    S,
    V,
    MarginalVector,
    SpreadingGraph,
    SpreadingParams,
    SystemState,
    exposed_infected_count,
)

MAX_ORACLE_NODES = 8  # 4^8 = 65,536 joint states


class CapacityError(ValueError):
    """Joint state space too large for the exact oracle."""


@dataclass(frozen=True)
class EventTrajectory:
    """A realized sample path: initial state plus ordered transition events.

    Each event is (time, node, from_code, to_code); times are strictly
    increasing and each event's source label matches the reconstructed state.
    """

    initial: SystemState
    events: tuple[tuple[float, int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        prev = 0.0
        codes = self.initial.codes.copy()
        for t, node, frm, to in self.events:
            if t <= prev:
                raise ValueError("event times must be strictly increasing")
            if codes[node] != frm:
                raise ValueError(f"event at t={t} does not match reconstructed state")
            codes[node] = to
            prev = t

    def state_at(self, t: float) -> SystemState:
        codes = self.initial.codes.copy()
        for et, node, _, to in self.events:
            if et > t:
                break
            codes[node] = to
        return SystemState(codes)

    def final_state(self) -> SystemState:
        return self.state_at(np.inf)

    def elimination_time(self) -> float | None:
        """First time with no exposed or infected nodes, or None if never
        reached along the recorded path."""
        codes = self.initial.codes.copy()
        count = int(np.count_nonzero((codes == E) | (codes == I)))
        if count == 0:
            return 0.0
        for t, node, frm, to in self.events:
            if frm in (E, I):
                count -= 1
            if to in (E, I):
                count += 1
            if count == 0:
                return t
        return None


@dataclass(frozen=True)
class RateTable:
    """Per-node transition rates toward each compartment, given a state."""

    rate: np.ndarray  # shape (n, 4); rate[i][c] = rate of node i toward c

    @property
    def total(self) -> float:
        return float(self.rate.sum())


def transition_rates(graph: SpreadingGraph, params: SpreadingParams,
                     state: SystemState) -> RateTable:
    """Jump intensities of every node under the current joint state."""
    params.validate_for(graph)
    if state.n != graph.n:
        raise ValueError("state dimension does not match graph")
    codes = state.codes
    rate = np.zeros((graph.n, 4))

    # infectious pressure on each (susceptible) target node
    src = graph.edge_sources
    pressure = np.zeros(graph.n)
    if graph.n_edges:
        contrib = params.beta * (codes[src] == E) + params.gamma * (codes[src] == I)
        np.add.at(pressure, graph.edge_targets, contrib)

    s_mask = codes == S
    rate[s_mask, E] = pressure[s_mask]
    rate[s_mask, V] = params.xi[s_mask]
    e_mask = codes == E
    rate[e_mask, I] = params.delta[e_mask]
    i_mask = codes == I
    rate[i_mask, V] = params.eta[i_mask]
    v_mask = codes == V
    rate[v_mask, S] = params.alpha[v_mask]
    return RateTable(rate)


Schedule = Sequence[tuple[float, SpreadingParams]]


def as_schedule(params_or_schedule) -> list[tuple[float, SpreadingParams]]:
    """Normalize a constant parameter set or piecewise-constant schedule
    into a sorted [(start_time, params), ...] list starting at 0."""
    if isinstance(params_or_schedule, SpreadingParams):
        return [(0.0, params_or_schedule)]
    sched = sorted(((float(t), p) for t, p in params_or_schedule), key=lambda tp: tp[0])
    if not sched or sched[0][0] != 0.0:
        raise ValueError("schedule must start at time 0")
    return sched


def simulate_path(graph: SpreadingGraph, params_schedule, x0: SystemState,
                  horizon: float, rng: np.random.Generator) -> EventTrajectory:
    """Gillespie direct-method realization over [0, horizon].

    Parameter changes at schedule breakpoints truncate the exponential clock
    and restart it, which is exact by memorylessness.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    sched = as_schedule(params_schedule)
    breakpoints = [t for t, _ in sched[1:]] + [horizon]
    codes = x0.codes.copy()
    events: list[tuple[float, int, int, int]] = []
    t = 0.0
    for seg_idx, (seg_start, params) in enumerate(sched):
        params.validate_for(graph)
        seg_end = breakpoints[seg_idx]
        if seg_end > horizon:
            seg_end = horizon
        if t >= horizon:
            break
        while True:
            table = transition_rates(graph, params, SystemState(codes)).rate
            total = table.sum()
            if total <= 0.0:
                t = seg_end
                break
            t_next = t + rng.exponential(1.0 / total)
            if t_next >= seg_end:
                t = seg_end
                break
            flat = table.ravel()
            k = int(rng.choice(flat.size, p=flat / total))
            node, to = divmod(k, 4)
            events.append((t_next, node, int(codes[node]), to))
            codes[node] = to
            t = t_next
    return EventTrajectory(initial=x0, events=tuple(events))


def _joint_digits(n: int) -> np.ndarray:
    """Base-4 digit table: digits[s, i] is node i's compartment in joint
    state s (digit order S=0, E=1, I=2, V=3)."""
    states = np.arange(4 ** n)
    return np.stack([(states // 4 ** i) % 4 for i in range(n)], axis=1).astype(np.int8)


def build_generator(graph: SpreadingGraph, params: SpreadingParams) -> sp.csr_matrix:
    """Transposed generator Q^T of the joint chain, so dp/dt = Q^T p."""
    params.validate_for(graph)
    n = graph.n
    if n > MAX_ORACLE_NODES:
        raise CapacityError(
            f"exact oracle supports at most {MAX_ORACLE_NODES} nodes, got {n}")
    m = 4 ** n
    digits = _joint_digits(n)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []

    def add(src_states: np.ndarray, node: int, c_from: int, c_to: int,
            rates: np.ndarray) -> None:
        nz = rates > 0
        if not np.any(nz):
            return
        src_nz = src_states[nz]
        dst = src_nz + (c_to - c_from) * 4 ** node
        cols.append(src_nz)
        rows.append(dst)
        data.append(rates[nz])

    for i in range(n):
        lo, hi = graph.in_edge_ptr[i], graph.in_edge_ptr[i + 1]
        src_nodes = graph.in_edge_src[lo:hi]
        beta = params.beta[graph.in_edge_order[lo:hi]]
        gamma = params.gamma[graph.in_edge_order[lo:hi]]

        s_states = np.nonzero(digits[:, i] == S)[0]
        if src_nodes.size:
            nbr = digits[s_states][:, src_nodes]
            pressure = (nbr == E) @ beta + (nbr == I) @ gamma
        else:
            pressure = np.zeros(s_states.size)
        add(s_states, i, S, E, pressure)
        add(s_states, i, S, V, np.full(s_states.size, params.xi[i]))

        e_states = np.nonzero(digits[:, i] == E)[0]
        add(e_states, i, E, I, np.full(e_states.size, params.delta[i]))
        i_states = np.nonzero(digits[:, i] == I)[0]
        add(i_states, i, I, V, np.full(i_states.size, params.eta[i]))
        v_states = np.nonzero(digits[:, i] == V)[0]
        add(v_states, i, V, S, np.full(v_states.size, params.alpha[i]))

    row = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    col = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    dat = np.concatenate(data) if data else np.empty(0)
    qt = sp.coo_matrix((dat, (row, col)), shape=(m, m)).tocsr()
    exit_rates = np.asarray(qt.sum(axis=0)).ravel()
    qt = qt - sp.diags(exit_rates)
    return qt.tocsr()


def joint_state_index(state: SystemState) -> int:
    """Base-4 positional index of a joint state (node 0 = least significant)."""
    return int(np.dot(state.codes.astype(np.int64), 4 ** np.arange(state.n)))


def master_equation_marginals(graph: SpreadingGraph, params: SpreadingParams,
                              x0: SystemState, times: Sequence[float],
                              step: float | None = None) -> list[MarginalVector]:
    """Exact marginals E[X_i^C(t)] from the 4^n forward equation.

    The joint distribution is advanced with fixed-step classical Runge-Kutta
    on the sparse generator; ``step`` defaults to a stability-safe fraction
    of the fastest exit rate.
    """
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted and nonnegative")
    qt = build_generator(graph, params)
    max_exit = float((-qt.diagonal()).max()) if qt.shape[0] else 0.0
    if step is None:
        step = 0.25 / max_exit if max_exit > 0 else 1.0
    if step <= 0:
        raise ValueError("step must be positive")

    n = graph.n
    digits = _joint_digits(n)
    p = np.zeros(4 ** n)
    p[joint_state_index(x0)] = 1.0

    def marginalize(pvec: np.ndarray) -> MarginalVector:
        out = np.empty((n, 4))
        for i in range(n):
            out[i] = np.bincount(digits[:, i], weights=pvec, minlength=4)
        # wash out integrator round-off before the simplex validation
        out = np.clip(out, 0.0, 1.0)
        return MarginalVector(out / out.sum(axis=1, keepdims=True))

    results: list[MarginalVector] = []
    t = 0.0
    for target in times:
        span = target - t
        if span > 0:
            n_sub = max(1, int(np.ceil(span / step - 1e-12)))
            h = span / n_sub
            for _ in range(n_sub):
                k1 = qt @ p
                k2 = qt @ (p + 0.5 * h * k1)
                k3 = qt @ (p + 0.5 * h * k2)
                k4 = qt @ (p + h * k3)
                p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target
        if abs(p.sum() - 1.0) > 1e-7:
            raise RuntimeError(
                f"joint distribution lost mass at t={t}: sum={p.sum()!r}")
        results.append(marginalize(p))
    return results


def monte_carlo_marginals(graph: SpreadingGraph, params_schedule, x0: SystemState,
                          times: Sequence[float], trials: int,
                          rng: np.random.Generator,
                          ) -> tuple[list[MarginalVector], list[np.ndarray]]:
    """Empirical compartment frequencies at each time, with standard errors."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    times = [float(t) for t in times]
    horizon = max(times) if times else 0.0
    counts = np.zeros((len(times), graph.n, 4))
    for _ in range(trials):
        traj = simulate_path(graph, params_schedule, x0,
                             horizon if horizon > 0 else 1e-9, rng)
        for k, t in enumerate(times):
            codes = traj.state_at(t).codes
            counts[k, np.arange(graph.n), codes] += 1.0
    freqs = counts / trials
    marginals = [MarginalVector(freqs[k]) for k in range(len(times))]
    stderr = [np.sqrt(freqs[k] * (1 - freqs[k]) / trials) for k in range(len(times))]
    return marginals, stderr


# --- CSV serialization ------------------------------------------------------

def trajectory_to_csv(traj: EventTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "node", "from", "to"])
        for t, node, frm, to in traj.events:
            writer.writerow([f"{t:.12g}", node, COMPARTMENTS[frm], COMPARTMENTS[to]])


def marginals_to_csv(times: Sequence[float], marginals: Sequence[MarginalVector],
                     path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "node", "p_S", "p_E", "p_I", "p_V"])
        for t, marg in zip(times, marginals):
            for i in range(marg.n):
                writer.writerow([f"{t:.12g}", i] + [f"{v:.12g}" for v in marg.p[i]])
