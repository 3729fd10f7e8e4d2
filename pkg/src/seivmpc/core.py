"""Shared domain types: spreading graph, rate parameters, node states.

Compartments are encoded as integers S=0, E=1, I=2, V=3 throughout the
package; ``COMPARTMENTS`` maps codes back to letters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

COMPARTMENTS = "SEIV"
S, E, I, V = range(4)

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class SpreadingGraph:
    """Directed contact network.

    An edge (i, j) means j is an in-neighbor of i: node j's compartment
    drives exposure of node i.  No self-loops, no duplicate edges.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    in_neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    # CSR layout over in-edges, grouped by target node: edge k of the input
    # ordering appears at position in_edge_order[k'].
    in_edge_ptr: np.ndarray = field(init=False, repr=False, compare=False)
    in_edge_src: np.ndarray = field(init=False, repr=False, compare=False)
    in_edge_order: np.ndarray = field(init=False, repr=False, compare=False)
    # edge endpoint arrays in the input edge ordering
    edge_targets: np.ndarray = field(init=False, repr=False, compare=False)
    edge_sources: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i},{j}) out of range for n={self.n}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
        object.__setattr__(self, "edges", edges)

        targets = np.fromiter((i for i, _ in edges), dtype=np.int64, count=len(edges))
        sources = np.fromiter((j for _, j in edges), dtype=np.int64, count=len(edges))
        object.__setattr__(self, "edge_targets", targets)
        object.__setattr__(self, "edge_sources", sources)
        order = np.argsort(targets, kind="stable")
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(ptr, targets + 1, 1)
        np.cumsum(ptr, out=ptr)
        object.__setattr__(self, "in_edge_ptr", ptr)
        object.__setattr__(self, "in_edge_src", sources[order])
        object.__setattr__(self, "in_edge_order", order)
        nbrs = tuple(
            tuple(int(s) for s in self.in_edge_src[ptr[i]:ptr[i + 1]])
            for i in range(self.n)
        )
        object.__setattr__(self, "in_neighbors", nbrs)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class SpreadingParams:
    """Per-node and per-edge transition rates (1/time).

    ``beta`` and ``gamma`` are aligned with the owning graph's edge tuple:
    entry k is the exposure rate along ``graph.edges[k]`` from an exposed
    (beta) or infected (gamma) source.
    """

    alpha: np.ndarray  # V -> S
    xi: np.ndarray     # S -> V
    delta: np.ndarray  # E -> I
    eta: np.ndarray    # I -> V
    beta: np.ndarray   # S -> E via exposed in-neighbor
    gamma: np.ndarray  # S -> E via infected in-neighbor

    def __post_init__(self):
        for name in ("alpha", "xi", "delta", "eta", "beta", "gamma"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} entries must be finite and >= 0")
            object.__setattr__(self, name, arr)
        n = self.alpha.shape[0]
        if any(getattr(self, name).shape[0] != n for name in ("xi", "delta", "eta")):
            raise ValueError("per-node rate arrays disagree in length")
        if self.beta.shape != self.gamma.shape:
            raise ValueError("beta and gamma disagree in length")

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def validate_for(self, graph: SpreadingGraph) -> None:
        if self.n != graph.n or self.beta.shape[0] != graph.n_edges:
            raise ValueError("parameters are not keyed to this graph")

    @classmethod
    def uniform(cls, graph: SpreadingGraph, *, alpha: float, xi: float,
                delta: float, eta: float, beta: float, gamma: float) -> "SpreadingParams":
        n, m = graph.n, graph.n_edges
        return cls(
            alpha=np.full(n, alpha), xi=np.full(n, xi),
            delta=np.full(n, delta), eta=np.full(n, eta),
            beta=np.full(m, beta), gamma=np.full(m, gamma),
        )


@dataclass(frozen=True)
class SystemState:
    """One compartment label per node; the exact process state."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int8)
        if codes.ndim != 1 or codes.size == 0:
            raise ValueError("state must be a nonempty 1-d label vector")
        if np.any((codes < 0) | (codes > 3)):
            raise ValueError("labels must be one of S, E, I, V")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def from_labels(cls, labels: str | Iterable[str]) -> "SystemState":
        return cls(np.array([COMPARTMENTS.index(c) for c in labels], dtype=np.int8))

    @property
    def labels(self) -> str:
        return "".join(COMPARTMENTS[c] for c in self.codes)

    @property
    def n(self) -> int:
        return self.codes.shape[0]


@dataclass(frozen=True)
class MarginalVector:
    """Per-node compartment probabilities, rows summing to one."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 4:
            raise ValueError("marginals must have shape (n, 4)")
        if np.any(p < -_PROB_TOL) or np.any(p > 1 + _PROB_TOL):
            raise ValueError("marginal entries must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > _PROB_TOL):
            raise ValueError("marginal rows must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.shape[0]


def indicator_marginals(state: SystemState) -> MarginalVector:
    """Degenerate marginals putting mass 1 on each node's current label."""
    p = np.zeros((state.n, 4))
    p[np.arange(state.n), state.codes] = 1.0
    return MarginalVector(p)


def exposed_infected_count(state: SystemState) -> int:
    """Number of nodes currently exposed or infected."""
    return int(np.count_nonzero((state.codes == E) | (state.codes == I)))


def _check_prob(name: str, value: float) -> float:
    v = float(value)
    if not (-_PROB_TOL <= v <= 1 + _PROB_TOL):
        raise ValueError(f"{name}={value} is not a probability")
    return min(max(v, 0.0), 1.0)


def frechet_lower(y: float, z: float) -> float:
    """Lower bound max{0, y + z - 1} on a joint probability with marginals y, z."""
    y = _check_prob("y", y)
    z = _check_prob("z", z)
    return max(0.0, y + z - 1.0)


def frechet_upper(y: float, z: float) -> float:
    """Upper bound min{y, z} on a joint probability with marginals y, z."""
    y = _check_prob("y", y)
    z = _check_prob("z", z)
    return min(y, z)


def erdos_renyi(n: int, p: float, seed: int) -> SpreadingGraph:
    """Directed Erdos-Renyi graph: each ordered pair (i, j), i != j, is an
    edge independently with probability p.  Deterministic given the seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 <= p <= 1.0):
        raise ValueError("connection probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    ii, jj = np.nonzero(mask)
    return SpreadingGraph(n=n, edges=tuple(zip(ii.tolist(), jj.tolist())))


# --- JSON interchange -------------------------------------------------------
# { "n": int, "edges": [[i,j],...], "alpha": [...], "xi": [...], "delta": [...],
#   "eta": [...], "beta": {"i,j": val}, "gamma": {"i,j": val} }
# with 0-based node indices.

def network_to_json(graph: SpreadingGraph, params: SpreadingParams) -> dict:
    params.validate_for(graph)
    return {
        "n": graph.n,
        "edges": [[i, j] for i, j in graph.edges],
        "alpha": params.alpha.tolist(),
        "xi": params.xi.tolist(),
        "delta": params.delta.tolist(),
        "eta": params.eta.tolist(),
        "beta": {f"{i},{j}": b for (i, j), b in zip(graph.edges, params.beta.tolist())},
        "gamma": {f"{i},{j}": g for (i, j), g in zip(graph.edges, params.gamma.tolist())},
    }


def network_from_json(doc: Mapping) -> tuple[SpreadingGraph, SpreadingParams]:
    graph = SpreadingGraph(n=int(doc["n"]), edges=tuple((e[0], e[1]) for e in doc["edges"]))

    def edge_rates(table: Mapping[str, float]) -> np.ndarray:
        rates = np.empty(graph.n_edges)
        for k, (i, j) in enumerate(graph.edges):
            key = f"{i},{j}"
            if key not in table:
                raise ValueError(f"missing rate for edge ({i},{j})")
            rates[k] = table[key]
        if len(table) != graph.n_edges:
            raise ValueError("edge-rate table does not match the edge set")
        return rates

    params = SpreadingParams(
        alpha=np.asarray(doc["alpha"], dtype=float),
        xi=np.asarray(doc["xi"], dtype=float),
        delta=np.asarray(doc["delta"], dtype=float),
        eta=np.asarray(doc["eta"], dtype=float),
        beta=edge_rates(doc["beta"]),
        gamma=edge_rates(doc["gamma"]),
    )
    params.validate_for(graph)
    return graph, params


def save_network(path, graph: SpreadingGraph, params: SpreadingParams) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_json(graph, params), fh, indent=1)
        fh.write("\n")


def load_network(path) -> tuple[SpreadingGraph, SpreadingParams]:
    with open(path) as fh:
        return network_from_json(json.load(fh))
