"""Ground-truth configurations and unit-disk sensing graphs.

All coordinates use a unit-square normalization: the default formation spans
a 1x1 box centered at the origin, and sensing radii (0.4, 0.67, 1.5, ...) are
interpreted in those units. Graphs are static for the lifetime of a run; every
type here is immutable and every operation is a pure function.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

NodeId = int

__all__ = [
    "Arena",
    "NodeId",
    "Position",
    "SensingGraph",
    "augment_with_emitter",
    "distance",
    "ggr_radius_threshold",
    "is_connected",
    "neighbors",
    "two_hop_shadow_candidates",
    "unit_disk_graph",
]


@dataclass(frozen=True)
class Position:
    """A 2D point: a robot's ground-truth position or a position estimate."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position coordinates must be finite, got ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y


def distance(a: Position, b: Position) -> float:
    """Euclidean distance between two positions."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class Arena:
    """Axis-aligned box from which initial estimates are drawn.

    Defaults to the centered unit square matching the lattice generator.
    """

    xmin: float = -0.5
    ymin: float = -0.5
    xmax: float = 0.5
    ymax: float = 0.5

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("degenerate arena box")


@dataclass(frozen=True)
class SensingGraph:
    """Undirected unit-disk sensing graph over ``n`` nodes.

    Edges are stored canonically as ``(i, j)`` with ``i < j``. If ``emitter``
    is set, that node is connected to every other node regardless of range
    (its extra links coexist with the unit-disk edges).
    """

    n: int
    radius: float
    edges: frozenset[tuple[NodeId, NodeId]]
    emitter: NodeId | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if self.radius <= 0:
            raise ValueError("sensing radius must be positive")
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"invalid edge ({i}, {j}) for n={self.n}")
        if self.emitter is not None:
            _check_node(self, self.emitter)
            missing = [
                i for i in range(self.n)
                if i != self.emitter and _key(i, self.emitter) not in self.edges
            ]
            if missing:
                raise ValueError(f"emitter {self.emitter} lacks edges to nodes {missing}")

    @cached_property
    def adjacency(self) -> tuple[tuple[NodeId, ...], ...]:
        """Sorted neighbor tuple per node."""
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(b)) for b in nbrs)

    @cached_property
    def sorted_edges(self) -> tuple[tuple[NodeId, NodeId], ...]:
        """Edges in lexicographic order; the canonical edge enumeration."""
        return tuple(sorted(self.edges))


def _key(i: NodeId, j: NodeId) -> tuple[NodeId, NodeId]:
    return (i, j) if i < j else (j, i)


def _check_node(graph: SensingGraph, i: NodeId) -> None:
    if not (isinstance(i, int) and 0 <= i < graph.n):
        raise ValueError(f"invalid node id {i!r} for n={graph.n}")


def unit_disk_graph(positions: list[Position], radius: float) -> SensingGraph:
    """Build the sensing graph with an edge for every pair within ``radius``.

    Edge presence uses ``distance <= radius`` (boundary pairs are connected).
    """
    if not positions:
        raise ValueError("positions must be non-empty")
    if radius <= 0:
        raise ValueError("sensing radius must be positive")
    for p in positions:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise ValueError("non-finite position rejected")
    n = len(positions)
    edges = frozenset(
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if distance(positions[i], positions[j]) <= radius
    )
    return SensingGraph(n=n, radius=radius, edges=edges)


def neighbors(graph: SensingGraph, i: NodeId) -> set[NodeId]:
    """Direct neighbor set of node ``i``."""
    _check_node(graph, i)
    return set(graph.adjacency[i])


def two_hop_shadow_candidates(graph: SensingGraph, i: NodeId) -> set[tuple[NodeId, NodeId]]:
    """All ``(k, j)`` pairs where ``k`` is reachable from ``i`` only through
    the intermediate neighbor ``j``.

    A candidate appears once per forwarding path: the same ``k`` may occur
    under several intermediates ``j``. ``i`` itself is never a candidate.
    """
    _check_node(graph, i)
    direct = set(graph.adjacency[i])
    out: set[tuple[NodeId, NodeId]] = set()
    for j in graph.adjacency[i]:
        for k in graph.adjacency[j]:
            if k != i and k not in direct:
                out.add((k, j))
    return out


def ggr_radius_threshold(n: int, log_base: str = "ten") -> float:
    """Sensing radius above which a random unit-square deployment of ``n``
    nodes is globally rigid with very high probability: ``2*sqrt(2)*sqrt(log(n)/n)``.

    The logarithm base is not fixed by the threshold's usual statement; base
    ten reproduces the commonly quoted 0.67 value for n=25 and is the default.
    """
    if n < 2:
        raise ValueError("threshold needs n >= 2")
    if log_base == "ten":
        log_n = math.log10(n)
    elif log_base == "natural":
        log_n = math.log(n)
    else:
        raise ValueError(f"unknown log base {log_base!r}; use 'ten' or 'natural'")
    return 2.0 * math.sqrt(2.0) * math.sqrt(log_n / n)


def augment_with_emitter(graph: SensingGraph, e: NodeId) -> SensingGraph:
    """Return a copy of ``graph`` with node ``e`` connected to every other node."""
    _check_node(graph, e)
    extra = {_key(i, e) for i in range(graph.n) if i != e}
    return SensingGraph(
        n=graph.n,
        radius=graph.radius,
        edges=graph.edges | extra,
        emitter=e,
    )


def is_connected(graph: SensingGraph) -> bool:
    """True iff the graph forms a single connected component."""
    if graph.n == 1:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in graph.adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == graph.n
