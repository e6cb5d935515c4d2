"""Communication graphs, consensus weights, and switching-topology schedules.

Graphs are undirected with positive edge weights (weight 1.0 unless stated).
The consensus weight matrix used by the round engines gives every agent a
uniform weight over its closed neighborhood (itself plus its neighbors),
which keeps rows stochastic on any graph, including graphs with isolated
agents: an isolated agent simply keeps its own value.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Graph",
    "MarkovSchedule",
    "default_subset_size",
    "expected_edges",
    "laplacian",
    "make_dms_schedule",
    "make_static_schedule",
    "make_subset_graph",
    "make_topology",
    "mixing_matrix",
    "stationary_distribution",
    "union_connectivity",
]


@dataclass(frozen=True)
class Graph:
    """Undirected graph on agents ``0 .. agent_count - 1``.

    Edges are stored canonically as ``(i, j)`` with ``i < j``. ``weights``
    maps edges to positive coupling strengths; ``None`` means 1.0 everywhere.
    """

    agent_count: int
    edges: frozenset
    weights: Mapping[tuple[int, int], float] | None = None

    def __post_init__(self) -> None:
        if self.agent_count < 1:
            raise ValueError("graph needs at least one agent")
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self loop on agent {i}")
            a, b = (i, j) if i < j else (j, i)
            if not (0 <= a < b < self.agent_count):
                raise ValueError(f"edge ({i}, {j}) outside agent range")
            canon.add((a, b))
        object.__setattr__(self, "edges", frozenset(canon))
        if self.weights is not None:
            for edge, w in self.weights.items():
                if edge not in self.edges:
                    raise ValueError(f"weight for missing edge {edge}")
                if not w > 0:
                    raise ValueError(f"edge weight must be positive, got {w}")

    @cached_property
    def sorted_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.edges))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.agent_count)]
        for i, j in self.sorted_edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(nb)) for nb in adj)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def weight(self, i: int, j: int) -> float:
        edge = (i, j) if i < j else (j, i)
        if edge not in self.edges:
            raise KeyError(f"no edge {edge}")
        if self.weights is None:
            return 1.0
        return float(self.weights.get(edge, 1.0))

    def isolated(self) -> tuple[int, ...]:
        """Agents with no incident edge."""
        return tuple(int(i) for i in np.flatnonzero(self.degrees == 0))

    def active(self) -> tuple[int, ...]:
        """Agents with at least one incident edge."""
        return tuple(int(i) for i in np.flatnonzero(self.degrees > 0))


def laplacian(graph: Graph) -> np.ndarray:
    """Weighted graph Laplacian: minus the weight off-diagonal, weighted
    degree on the diagonal. Symmetric, rows sum to zero, positive
    semidefinite for positive weights."""
    n = graph.agent_count
    lap = np.zeros((n, n))
    for i, j in graph.sorted_edges:
        w = graph.weight(i, j)
        lap[i, j] -= w
        lap[j, i] -= w
        lap[i, i] += w
        lap[j, j] += w
    return lap


def mixing_matrix(graph: Graph) -> np.ndarray:
    """Row-stochastic consensus weights, uniform over closed neighborhoods.

    Row i holds ``1 / (deg(i) + 1)`` on itself and each neighbor. An
    isolated agent gets the identity row, so consensus degenerates to
    keeping its own local update.
    """
    n = graph.agent_count
    mix = np.zeros((n, n))
    for i, nb in enumerate(graph.neighbors):
        w = 1.0 / (len(nb) + 1)
        mix[i, i] = w
        for j in nb:
            mix[i, j] = w
    return mix


def make_subset_graph(agent_count: int, members: Iterable[int]) -> Graph:
    """Complete graph on ``members``; every other agent is isolated."""
    members = sorted(set(int(m) for m in members))
    if members and not (0 <= members[0] and members[-1] < agent_count):
        raise ValueError("subset members outside agent range")
    edges = frozenset(itertools.combinations(members, 2))
    return Graph(agent_count, edges)


def make_topology(
    kind: str,
    agent_count: int,
    *,
    subset_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> Graph:
    """Build a named topology.

    ``ring`` and ``complete`` live on the agents themselves. ``star`` adds a
    hub as one extra node with index ``agent_count`` and one edge per agent,
    so the returned graph has ``agent_count + 1`` nodes. ``subset`` draws a
    uniform random subset of ``subset_size`` agents and connects it
    completely; it needs ``rng``.
    """
    if kind == "ring":
        if agent_count < 3:
            raise ValueError("ring needs at least 3 agents")
        edges = frozenset(
            (i, (i + 1) % agent_count) if i < (i + 1) % agent_count else ((i + 1) % agent_count, i)
            for i in range(agent_count)
        )
        return Graph(agent_count, edges)
    if kind == "complete":
        return make_subset_graph(agent_count, range(agent_count))
    if kind == "star":
        hub = agent_count
        edges = frozenset((i, hub) for i in range(agent_count))
        return Graph(agent_count + 1, edges)
    if kind == "subset":
        if subset_size is None or rng is None:
            raise ValueError("subset topology needs subset_size and rng")
        if subset_size < 3:
            raise ValueError("subset smaller than 3 cannot co-train")
        if subset_size > agent_count:
            raise ValueError("subset larger than the agent population")
        members = rng.choice(agent_count, size=subset_size, replace=False)
        return make_subset_graph(agent_count, members)
    raise ValueError(f"unknown topology kind {kind!r}")


def default_subset_size(agent_count: int) -> int:
    """Default co-training subset size, roughly 70% of the population.

    At 70% the expected complete-subset edge count is close to half the
    edges of the full complete graph.
    """
    return max(3, round(0.7 * agent_count))


@dataclass
class MarkovSchedule:
    """Markov chain over a finite set of communication substructures.

    ``advance`` samples the next state from the transition row of the
    current state using the schedule's own generator, then returns that
    state's graph. All draws come from ``rng`` only, so two schedules built
    with equal seeds produce identical graph sequences.
    """

    substructures: list[Graph]
    transition: np.ndarray
    rng: np.random.Generator
    state: int = 0

    def __post_init__(self) -> None:
        if not self.substructures:
            raise ValueError("schedule needs at least one substructure")
        counts = {g.agent_count for g in self.substructures}
        if len(counts) != 1:
            raise ValueError("substructures disagree on agent count")
        self.transition = np.asarray(self.transition, dtype=float)
        q = len(self.substructures)
        if self.transition.shape != (q, q):
            raise ValueError("transition matrix shape must match substructure count")
        if np.any(self.transition < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition rows must sum to one")
        if not (0 <= self.state < q):
            raise ValueError("initial state out of range")

    @property
    def agent_count(self) -> int:
        return self.substructures[0].agent_count

    def advance(self) -> Graph:
        row = self.transition[self.state]
        self.state = int(self.rng.choice(len(row), p=row))
        return self.substructures[self.state]


def make_static_schedule(graph: Graph) -> MarkovSchedule:
    """Single-substructure schedule; every round uses the same graph."""
    return MarkovSchedule(
        substructures=[graph],
        transition=np.ones((1, 1)),
        rng=np.random.default_rng(0),
    )


def make_dms_schedule(
    agent_count: int,
    *,
    subset_size: int | None = None,
    substructure_count: int = 8,
    transition: np.ndarray | None = None,
    rng: np.random.Generator,
) -> MarkovSchedule:
    """Pre-sample complete-subset substructures and wrap them in a chain.

    Each substructure is a complete graph on an independently drawn
    ``subset_size`` subset. The transition matrix defaults to uniform,
    i.e. independent re-selection each round.
    """
    m = default_subset_size(agent_count) if subset_size is None else int(subset_size)
    if m < 3:
        raise ValueError("subset smaller than 3 cannot co-train")
    if m > agent_count:
        raise ValueError("subset larger than the agent population")
    if substructure_count < 1:
        raise ValueError("need at least one substructure")
    subs = [
        make_subset_graph(agent_count, rng.choice(agent_count, size=m, replace=False))
        for _ in range(substructure_count)
    ]
    if transition is None:
        transition = np.full((substructure_count, substructure_count), 1.0 / substructure_count)
    return MarkovSchedule(substructures=subs, transition=transition, rng=rng)


def stationary_distribution(transition: np.ndarray, iterations: int = 500) -> np.ndarray:
    """Stationary row vector by power iteration from the uniform start.

    For reducible chains (e.g. the identity) this settles on the uniform
    mixture over states, a deliberate convention.
    """
    transition = np.asarray(transition, dtype=float)
    pi = np.full(transition.shape[0], 1.0 / transition.shape[0])
    for _ in range(iterations):
        pi = pi @ transition
    return pi / pi.sum()


def expected_edges(schedule: MarkovSchedule) -> float:
    """Stationary-weighted mean edge count across the substructures."""
    pi = stationary_distribution(schedule.transition)
    counts = np.array([g.edge_count for g in schedule.substructures], dtype=float)
    return float(pi @ counts)


def union_connectivity(substructures: Sequence[Graph]) -> bool:
    """True when the union of all substructure edges connects every agent."""
    if not substructures:
        raise ValueError("no substructures given")
    n = substructures[0].agent_count
    adj: list[set[int]] = [set() for _ in range(n)]
    for g in substructures:
        if g.agent_count != n:
            raise ValueError("substructures disagree on agent count")
        for i, j in g.sorted_edges:
            adj[i].add(j)
            adj[j].add(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n
