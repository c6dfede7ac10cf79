"""Round-based distributed localization engine and its protocol variants.

Information model: in every synchronous round each node (a) broadcasts its
current estimate to its direct neighbors, then (b) re-broadcasts its freshly
filled neighbor table (estimates plus measured ranges). A node's update step
therefore sees its own state, its neighbors' current estimates with the edge
readings, and two-hop estimates with a virtual range per forwarding path --
nothing else. All updates within a round are computed from the same snapshot
and committed simultaneously, so node processing order is irrelevant.

Two interchangeable engines drive `run_simulation`: a vectorized fast path
and a message-object path that records provenance for the information
contract audit. Both accumulate in the same canonical order (direct terms by
ascending neighbor id, shadow terms by ascending (k, via)) and produce
bit-identical trajectories.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .analysis import _ale_from_matrices, _distance_matrix
from .geometry import Arena, NodeId, Position, SensingGraph, distance
from .measurement import (
    NoiseModel,
    RangeMeasurementSet,
    _edge_range_vector,
    s1_estimate,
)

__all__ = [
    "GainConfig",
    "InformationContractAudit",
    "InformationContractViolation",
    "NeighborEntry",
    "NodeState",
    "ProtocolVariant",
    "RoundMessage",
    "TrajectoryLog",
    "TwoHopEntry",
    "exchange_phase",
    "initialize_states",
    "node_update",
    "round_operator",
    "run_simulation",
    "shadow_gate",
]

_INIT_STREAM = 0x1217_AB1E

SHADOW_LAMBDA_FORMS = ("pair", "via-leg")


class ProtocolVariant(enum.Enum):
    """The four localization protocols sharing one round engine."""

    BASELINE = "baseline"
    S1_EDGE = "s1-edge"
    EMITTER = "emitter"
    DCL_SPARSE = "dcl-sparse"

    @property
    def uses_shadow(self) -> bool:
        return self in (ProtocolVariant.S1_EDGE, ProtocolVariant.DCL_SPARSE)

    @property
    def needs_emitter(self) -> bool:
        return self in (ProtocolVariant.EMITTER, ProtocolVariant.DCL_SPARSE)

    @classmethod
    def parse(cls, name: str) -> "ProtocolVariant":
        key = name.strip().lower().replace("_", "-")
        for v in cls:
            if v.value == key or v.value.replace("-", "") == key:
                return v
        raise ValueError(f"unknown protocol variant {name!r}")


@dataclass(frozen=True)
class GainConfig:
    """Update gains: ``alpha`` for measured edges, ``beta`` for shadow edges.

    ``beta == 0`` disables shadow terms entirely.
    """

    alpha: float = 0.01
    beta: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be finite and > 0")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")


class NeighborEntry(NamedTuple):
    estimate: Position
    z: float


class TwoHopEntry(NamedTuple):
    estimate: Position
    z_hat: float
    via: NodeId


class ForwardedEntry(NamedTuple):
    node: NodeId
    estimate: Position
    z: float


@dataclass
class NodeState:
    """Everything node ``id`` knows: its estimate plus message-fed tables.

    ``neighbor_table`` maps a direct neighbor to its last broadcast estimate
    and the measured edge range. ``two_hop_table`` maps a two-hop node ``k``
    to one entry per forwarding path (the same ``k`` may be reachable through
    several intermediates).
    """

    id: NodeId
    estimate: Position
    neighbor_table: dict[NodeId, NeighborEntry] = field(default_factory=dict)
    two_hop_table: dict[NodeId, list[TwoHopEntry]] = field(default_factory=dict)


@dataclass(frozen=True)
class RoundMessage:
    """A single broadcast: the sender's estimate plus, in the second
    sub-phase, its neighbor table (one forwarded entry per direct neighbor).
    """

    sender: NodeId
    estimate: Position
    forwarded: tuple[ForwardedEntry, ...] = ()


class InformationContractViolation(AssertionError):
    """A value consumed by the update step did not arrive via a message."""


class InformationContractAudit:
    """Provenance recorder proving the 1-hop information contract.

    `exchange_phase` registers every table fill together with the message
    that carried it; `node_update` reports every table read. A read without a
    matching same-round delivery from a direct neighbor aborts immediately.
    """

    def __init__(self):
        self.rounds_audited = 0
        self.deliveries = 0
        self.reads_checked = 0
        self._adjacency: tuple[tuple[NodeId, ...], ...] | None = None
        self._neighbor_ok: set[tuple[NodeId, NodeId]] = set()
        self._two_hop_ok: set[tuple[NodeId, NodeId, NodeId]] = set()

    def begin_round(self, graph: SensingGraph) -> None:
        self.rounds_audited += 1
        self._adjacency = graph.adjacency
        self._neighbor_ok.clear()
        self._two_hop_ok.clear()

    def _require_edge(self, receiver: NodeId, sender: NodeId) -> None:
        if self._adjacency is None or sender not in self._adjacency[receiver]:
            raise InformationContractViolation(
                f"node {receiver} accepted a message from non-neighbor {sender}"
            )

    def deliver_neighbor(self, receiver: NodeId, sender: NodeId) -> None:
        self._require_edge(receiver, sender)
        self._neighbor_ok.add((receiver, sender))
        self.deliveries += 1

    def deliver_two_hop(self, receiver: NodeId, node: NodeId, via: NodeId) -> None:
        self._require_edge(receiver, via)
        self._two_hop_ok.add((receiver, node, via))
        self.deliveries += 1

    def check_neighbor_read(self, reader: NodeId, neighbor: NodeId) -> None:
        self.reads_checked += 1
        if (reader, neighbor) not in self._neighbor_ok:
            raise InformationContractViolation(
                f"node {reader} read neighbor {neighbor} without a message this round"
            )

    def check_two_hop_read(self, reader: NodeId, node: NodeId, via: NodeId) -> None:
        self.reads_checked += 1
        if (reader, node, via) not in self._two_hop_ok:
            raise InformationContractViolation(
                f"node {reader} read two-hop node {node} (via {via}) without a message"
            )


def initialize_states(n: int, arena: Arena = Arena(), seed: int = 0) -> list[NodeState]:
    """Independent uniform estimates over the arena box, empty tables."""
    if n < 1:
        raise ValueError("need at least one node")
    rng = np.random.default_rng((_INIT_STREAM, seed % 2**63))
    xs = rng.uniform(arena.xmin, arena.xmax, size=n)
    ys = rng.uniform(arena.ymin, arena.ymax, size=n)
    return [NodeState(id=i, estimate=Position(float(xs[i]), float(ys[i]))) for i in range(n)]


def exchange_phase(
    graph: SensingGraph,
    states: list[NodeState],
    measurements: RangeMeasurementSet,
    audit: InformationContractAudit | None = None,
) -> list[NodeState]:
    """One round of message passing; returns states with refilled tables.

    Sub-phase (a): every node broadcasts its estimate; receivers pair it with
    their own sensor reading for that edge. Sub-phase (b): every node
    broadcasts its now-current neighbor table; receivers keep entries for
    nodes outside their own neighborhood and attach the virtual range
    ``s1_estimate(z_ij, z_jk)`` per forwarding path.
    """
    n = graph.n
    if len(states) != n:
        raise ValueError(f"got {len(states)} states for {n} nodes")
    adjacency = graph.adjacency
    if audit is not None:
        audit.begin_round(graph)

    def z_of(i: NodeId, j: NodeId) -> float:
        try:
            return measurements[i, j]
        except KeyError:
            raise ValueError(f"missing measurement for edge ({i}, {j})") from None

    phase_a = [RoundMessage(sender=i, estimate=states[i].estimate) for i in range(n)]
    neighbor_tables: list[dict[NodeId, NeighborEntry]] = [{} for _ in range(n)]
    for i in range(n):
        for j in adjacency[i]:
            msg = phase_a[j]
            neighbor_tables[i][j] = NeighborEntry(estimate=msg.estimate, z=z_of(i, j))
            if audit is not None:
                audit.deliver_neighbor(receiver=i, sender=j)

    phase_b = [
        RoundMessage(
            sender=j,
            estimate=states[j].estimate,
            forwarded=tuple(
                ForwardedEntry(node=k, estimate=neighbor_tables[j][k].estimate, z=neighbor_tables[j][k].z)
                for k in adjacency[j]
            ),
        )
        for j in range(n)
    ]
    two_hop_tables: list[dict[NodeId, list[TwoHopEntry]]] = [{} for _ in range(n)]
    for i in range(n):
        direct = set(adjacency[i])
        for j in adjacency[i]:
            msg = phase_b[j]
            z_ij = neighbor_tables[i][j].z
            for entry in msg.forwarded:
                k = entry.node
                if k == i or k in direct:
                    continue
                z_hat = s1_estimate(z_ij, entry.z)
                two_hop_tables[i].setdefault(k, []).append(
                    TwoHopEntry(estimate=entry.estimate, z_hat=z_hat, via=j)
                )
                if audit is not None:
                    audit.deliver_two_hop(receiver=i, node=k, via=j)

    return [
        NodeState(
            id=i,
            estimate=states[i].estimate,
            neighbor_table=neighbor_tables[i],
            two_hop_table=two_hop_tables[i],
        )
        for i in range(n)
    ]


def shadow_gate(estimate_i: Position, estimate_k: Position, radius: float) -> int:
    """1 iff the two estimates currently sit strictly within sensing range.

    Used only for pairs already known to be out of true range, so an active
    gate flags an estimated overlap that cannot be real.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    dx = estimate_k.x - estimate_i.x
    dy = estimate_k.y - estimate_i.y
    return 1 if math.sqrt(dx * dx + dy * dy) < radius else 0


def _node_update_raw(
    state: NodeState,
    graph: SensingGraph,
    gains: GainConfig,
    variant: ProtocolVariant,
    shadow_lambda_form: str,
    audit: InformationContractAudit | None,
) -> tuple[float, float]:
    i = state.id
    xi = state.estimate.x
    yi = state.estimate.y
    ax = 0.0
    ay = 0.0
    alpha = gains.alpha
    table = state.neighbor_table
    for j in graph.adjacency[i]:
        entry = table.get(j)
        if entry is None:
            raise ValueError(
                f"node {i} has no table entry for neighbor {j}; run exchange_phase first"
            )
        if audit is not None:
            audit.check_neighbor_read(i, j)
        dx = entry.estimate.x - xi
        dy = entry.estimate.y - yi
        lam = (dx * dx + dy * dy) - entry.z * entry.z
        s = alpha * lam
        ax += s * dx
        ay += s * dy

    if variant.uses_shadow and gains.beta != 0.0:
        beta = gains.beta
        radius = graph.radius
        two_hop = state.two_hop_table
        for k in sorted(two_hop):
            for entry in two_hop[k]:
                if audit is not None:
                    audit.check_two_hop_read(i, k, entry.via)
                dx = entry.estimate.x - xi
                dy = entry.estimate.y - yi
                d2 = dx * dx + dy * dy
                if math.sqrt(d2) < radius:
                    if shadow_lambda_form == "pair":
                        lam = d2 - entry.z_hat * entry.z_hat
                    else:
                        ref = table[entry.via].estimate
                        if audit is not None:
                            audit.check_neighbor_read(i, entry.via)
                        ddx = ref.x - entry.estimate.x
                        ddy = ref.y - entry.estimate.y
                        lam = (ddx * ddx + ddy * ddy) - entry.z_hat * entry.z_hat
                    s = beta * lam
                    ax += s * dx
                    ay += s * dy
    return xi + ax, yi + ay


def node_update(
    state: NodeState,
    graph: SensingGraph,
    gains: GainConfig,
    variant: ProtocolVariant,
    shadow_lambda_form: str = "pair",
    audit: InformationContractAudit | None = None,
) -> Position:
    """Next-round estimate for one node, computed purely from its own tables.

    Direct terms pull toward (or push away from) each neighbor in proportion
    to the squared-range mismatch; shadow terms do the same for two-hop nodes
    whose estimates overlap the sensing disk even though the pair is truly
    out of range. ``shadow_lambda_form`` selects how the shadow mismatch is
    measured: ``"pair"`` (default) compares the (i, k) estimate separation to
    the virtual range, ``"via-leg"`` compares the forwarded (via, k) leg
    instead.
    """
    if shadow_lambda_form not in SHADOW_LAMBDA_FORMS:
        raise ValueError(f"shadow_lambda_form must be one of {SHADOW_LAMBDA_FORMS}")
    x, y = _node_update_raw(state, graph, gains, variant, shadow_lambda_form, audit)
    return Position(x, y)


@dataclass
class TrajectoryLog:
    """Full record of one simulation: per-round snapshots and error series.

    ``estimates`` holds the initial snapshot plus one per committed round,
    shape ``(iterations_run + 1, n, 2)``. ``ale_series`` has one entry per
    committed round; ``final_ale`` is its last value.
    """

    status: str
    iterations_run: int
    initial_ale: float
    ale_series: list[float]
    estimates: np.ndarray

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final_ale(self) -> float:
        return self.ale_series[-1] if self.ale_series else self.initial_ale

    def final_estimates(self) -> list[Position]:
        last = self.estimates[-1]
        return [Position(float(x), float(y)) for x, y in last]

    def write_csv(self, path) -> None:
        """One row per node per iteration: ``iteration,node,x,y``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,node,x,y\n")
            for t in range(self.estimates.shape[0]):
                for i in range(self.estimates.shape[1]):
                    x, y = self.estimates[t, i]
                    fh.write(f"{t},{i},{x:.17g},{y:.17g}\n")


class _VectorRound:
    """Precomputed index arrays realizing one synchronous round.

    The accumulation order matches the message engine exactly: directed edge
    terms grouped by node with ascending neighbor id, then shadow path terms
    grouped by node with ascending (two-hop node, intermediate).
    """

    def __init__(
        self,
        graph: SensingGraph,
        gains: GainConfig,
        variant: ProtocolVariant,
        shadow_lambda_form: str,
    ):
        adjacency = graph.adjacency
        eindex = {e: m for m, e in enumerate(graph.sorted_edges)}

        def edge_id(a: int, b: int) -> int:
            return eindex[(a, b) if a < b else (b, a)]

        di, dj, de = [], [], []
        for i in range(graph.n):
            for j in adjacency[i]:
                di.append(i)
                dj.append(j)
                de.append(edge_id(i, j))
        self.di = np.asarray(di, dtype=np.intp)
        self.dj = np.asarray(dj, dtype=np.intp)
        self.de = np.asarray(de, dtype=np.intp)

        self.alpha = gains.alpha
        self.beta = gains.beta
        self.radius = graph.radius
        self.n = graph.n
        self.form = shadow_lambda_form
        self.use_shadow = variant.uses_shadow and gains.beta != 0.0

        if self.use_shadow:
            pi, pj, pk, pe1, pe2 = [], [], [], [], []
            for i in range(graph.n):
                direct = set(adjacency[i])
                paths = sorted(
                    (k, j)
                    for j in adjacency[i]
                    for k in adjacency[j]
                    if k != i and k not in direct
                )
                for k, j in paths:
                    pi.append(i)
                    pj.append(j)
                    pk.append(k)
                    pe1.append(edge_id(i, j))
                    pe2.append(edge_id(j, k))
            self.pi = np.asarray(pi, dtype=np.intp)
            self.pj = np.asarray(pj, dtype=np.intp)
            self.pk = np.asarray(pk, dtype=np.intp)
            self.pe1 = np.asarray(pe1, dtype=np.intp)
            self.pe2 = np.asarray(pe2, dtype=np.intp)

    def step(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(X)

        diff = X[self.dj] - X[self.di]
        zd = z[self.de]
        lam = (diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) - zd * zd
        np.add.at(acc, self.di, (self.alpha * lam)[:, None] * diff)

        if self.use_shadow and self.pi.size:
            z1 = z[self.pe1]
            z2 = z[self.pe2]
            z_hat = 0.5 * ((z1 + z2) + np.sqrt(z1 * z1 + z2 * z2))
            diffk = X[self.pk] - X[self.pi]
            d2 = diffk[:, 0] * diffk[:, 0] + diffk[:, 1] * diffk[:, 1]
            gate = np.sqrt(d2) < self.radius
            if self.form == "pair":
                lam2 = d2 - z_hat * z_hat
            else:
                diffjk = X[self.pj] - X[self.pk]
                lam2 = (diffjk[:, 0] * diffjk[:, 0] + diffjk[:, 1] * diffjk[:, 1]) - z_hat * z_hat
            idx = np.nonzero(gate)[0]
            np.add.at(acc, self.pi[idx], (self.beta * lam2[idx])[:, None] * diffk[idx])

        return X + acc


def _positions_array(positions: list[Position]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in positions], dtype=float)


def _validate_run(
    graph: SensingGraph,
    truth: list[Position],
    initial_estimates: list[Position],
    gains: GainConfig,
    variant: ProtocolVariant,
    shadow_lambda_form: str,
) -> None:
    if len(truth) != graph.n:
        raise ValueError(f"truth has {len(truth)} positions for {graph.n} nodes")
    if len(initial_estimates) != graph.n:
        raise ValueError("one initial estimate per node required")
    if variant.needs_emitter and graph.emitter is None:
        raise ValueError(f"variant {variant.value} requires a graph with an emitter")
    if variant.uses_shadow and gains.beta <= 0:
        raise ValueError(f"variant {variant.value} requires beta > 0")
    if shadow_lambda_form not in SHADOW_LAMBDA_FORMS:
        raise ValueError(f"shadow_lambda_form must be one of {SHADOW_LAMBDA_FORMS}")


def run_simulation(
    graph: SensingGraph,
    truth: list[Position],
    initial_estimates: list[Position],
    gains: GainConfig,
    variant: ProtocolVariant,
    noise: NoiseModel,
    max_iterations: int = 1000,
    stop_tolerance: float = 1e-6,
    blow_up_bound: float = 1e3,
    shadow_lambda_form: str = "pair",
    audited: bool = False,
    audit: InformationContractAudit | None = None,
) -> TrajectoryLog:
    """Run synchronous rounds until convergence, divergence, or the cap.

    Per round: sample fresh measurements, exchange messages, compute every
    node's update from the same snapshot, commit simultaneously. Early stop
    fires after the maximum per-node displacement stays below
    ``stop_tolerance`` for 10 consecutive rounds; the divergence guard fires
    when any estimate leaves the ``blow_up_bound`` ball.

    ``audited=True`` routes every round through explicit message objects and
    the information-contract audit; the trajectory is identical to the fast
    path's.
    """
    _validate_run(graph, truth, initial_estimates, gains, variant, shadow_lambda_form)
    if max_iterations < 0:
        raise ValueError("max_iterations must be >= 0")
    if stop_tolerance <= 0 or blow_up_bound <= 0:
        raise ValueError("stop_tolerance and blow_up_bound must be positive")

    truth_arr = _positions_array(truth)
    dm_true = _distance_matrix(truth_arr)
    edges = graph.sorted_edges
    true_d = np.array([distance(truth[i], truth[j]) for i, j in edges], dtype=float)

    X = _positions_array(initial_estimates)
    initial_ale = _ale_from_matrices(_distance_matrix(X), dm_true)

    if audited:
        if audit is None:
            audit = InformationContractAudit()
        states = [NodeState(id=i, estimate=initial_estimates[i]) for i in range(graph.n)]
    else:
        core = _VectorRound(graph, gains, variant, shadow_lambda_form)

    snapshots = [X.copy()]
    ale_series: list[float] = []
    status = "max-iterations"
    iterations_run = 0
    streak = 0

    for t in range(max_iterations):
        z = _edge_range_vector(true_d, noise, t)
        if audited:
            measurements = RangeMeasurementSet(dict(zip(edges, z.tolist())))
            states = exchange_phase(graph, states, measurements, audit=audit)
            raw = [
                _node_update_raw(s, graph, gains, variant, shadow_lambda_form, audit)
                for s in states
            ]
            X_next = np.array(raw, dtype=float)
        else:
            X_next = core.step(X, z)

        disp = X_next - X
        max_disp = float(np.sqrt(disp[:, 0] ** 2 + disp[:, 1] ** 2).max())
        X = X_next
        snapshots.append(X.copy())
        ale_series.append(_ale_from_matrices(_distance_matrix(X), dm_true))
        iterations_run = t + 1

        norms = np.sqrt(X[:, 0] ** 2 + X[:, 1] ** 2)
        if not np.all(np.isfinite(X)) or float(norms.max()) > blow_up_bound:
            status = "diverged"
            break

        if audited:
            states = [
                NodeState(id=i, estimate=Position(float(X[i, 0]), float(X[i, 1])))
                for i in range(graph.n)
            ]

        if max_disp < stop_tolerance:
            streak += 1
            if streak >= 10:
                status = "converged"
                break
        else:
            streak = 0

    return TrajectoryLog(
        status=status,
        iterations_run=iterations_run,
        initial_ale=initial_ale,
        ale_series=ale_series,
        estimates=np.stack(snapshots),
    )


def round_operator(
    graph: SensingGraph,
    truth: list[Position],
    gains: GainConfig,
    variant: ProtocolVariant,
    shadow_lambda_form: str = "pair",
) -> Callable[[np.ndarray], np.ndarray]:
    """The noiseless one-round update as a map on flat state vectors.

    Measurements are frozen at the exact ground-truth distances (sigma = 0),
    so the returned map is deterministic; it underlies the numerical
    stability diagnostics.
    """
    placeholder = [Position(0.0, 0.0)] * graph.n
    _validate_run(graph, truth, placeholder, gains, variant, shadow_lambda_form)
    core = _VectorRound(graph, gains, variant, shadow_lambda_form)
    z = np.array([distance(truth[i], truth[j]) for i, j in graph.sorted_edges], dtype=float)

    def apply(flat: np.ndarray) -> np.ndarray:
        X = np.asarray(flat, dtype=float).reshape(graph.n, 2)
        return core.step(X, z).reshape(-1)

    return apply
