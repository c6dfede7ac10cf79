"""Noisy range sampling and shadow-edge distance arithmetic.

Range readings are symmetric: one value per undirected edge per round, shared
by both endpoints. The per-round streams are derived deterministically from
``(seed, round)`` so any round can be regenerated independently, which keeps
measurement sampling a pure function.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from .geometry import NodeId, Position, SensingGraph, distance

__all__ = [
    "NoiseModel",
    "RangeMeasurementSet",
    "ShadowBounds",
    "range_inconsistency",
    "s1_bounds",
    "s1_estimate",
    "sample_measurements",
]

# Domain separator mixed into the per-round generator so measurement draws can
# never collide with the estimate-initialization stream built from the same seed.
_MEASUREMENT_STREAM = 0x5EED_14A6


@dataclass(frozen=True)
class NoiseModel:
    """Additive zero-mean Gaussian range noise with a reproducible stream."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("noise sigma must be finite and >= 0")


class RangeMeasurementSet(Mapping):
    """One noisy range reading per undirected edge of a sensing graph.

    Lookup accepts either orientation of the pair: ``m[i, j] == m[j, i]``.
    """

    def __init__(self, values: dict[tuple[NodeId, NodeId], float]):
        self._values = {_canon(k): float(v) for k, v in values.items()}
        for pair, z in self._values.items():
            if z < 0:
                raise ValueError(f"negative range reading {z} for edge {pair}")

    def __getitem__(self, pair: tuple[NodeId, NodeId]) -> float:
        return self._values[_canon(pair)]

    def __iter__(self) -> Iterator[tuple[NodeId, NodeId]]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"RangeMeasurementSet({len(self)} edges)"


def _canon(pair: tuple[NodeId, NodeId]) -> tuple[NodeId, NodeId]:
    i, j = pair
    if i == j:
        raise KeyError(f"self-pair ({i}, {j}) has no range reading")
    return (i, j) if i < j else (j, i)


def _round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng((_MEASUREMENT_STREAM, seed % 2**63, round_index))


def _edge_range_vector(
    true_distances: np.ndarray, noise: NoiseModel, round_index: int
) -> np.ndarray:
    """Noisy readings for the canonical edge enumeration, clamped at zero."""
    if noise.sigma == 0.0:
        return true_distances.copy()
    g = _round_rng(noise.seed, round_index).standard_normal(true_distances.shape[0])
    return np.maximum(true_distances + noise.sigma * g, 0.0)


def sample_measurements(
    graph: SensingGraph,
    truth: list[Position],
    noise: NoiseModel,
    round_index: int = 0,
) -> RangeMeasurementSet:
    """Draw one round of range readings for every edge of ``graph``.

    Each edge gets ``max(0, true_distance + g)`` with ``g ~ N(0, sigma)``,
    drawn independently per edge per round; ``sigma == 0`` yields exact
    distances. Identical ``(seed, round_index)`` reproduce identical readings.
    """
    if len(truth) != graph.n:
        raise ValueError(f"truth has {len(truth)} positions for {graph.n} nodes")
    edges = graph.sorted_edges
    d = np.array([distance(truth[i], truth[j]) for i, j in edges], dtype=float)
    z = _edge_range_vector(d, noise, round_index)
    return RangeMeasurementSet(dict(zip(edges, z.tolist())))


@dataclass(frozen=True)
class ShadowBounds:
    """Distance bracket for a virtual edge derived from its two real legs."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (0 <= self.lower <= self.upper):
            raise ValueError(f"invalid bounds [{self.lower}, {self.upper}]")


def s1_bounds(d_ij: float, d_jk: float) -> ShadowBounds:
    """Bracket the unmeasured distance ``d_ik`` given the two legs of the
    two-hop path through a common neighbor.

    The upper bound is the co-linear worst case ``d_ij + d_jk``; the lower
    bound ``sqrt(d_ij^2 + d_jk^2)`` is the right-angle configuration, which
    brackets the true distance whenever the angle at the shared neighbor is
    at least 90 degrees. Two nodes that cannot sense each other but share a
    neighbor are pushed toward that regime by the disk geometry.
    """
    if d_ij < 0 or d_jk < 0:
        raise ValueError("leg distances must be non-negative")
    return ShadowBounds(
        lower=math.sqrt(d_ij * d_ij + d_jk * d_jk),
        upper=d_ij + d_jk,
    )


def s1_estimate(z_ij: float, z_jk: float) -> float:
    """Virtual range for a shadow edge: the midpoint of its two bounds."""
    if z_ij < 0 or z_jk < 0:
        raise ValueError("leg readings must be non-negative")
    return 0.5 * ((z_ij + z_jk) + math.sqrt(z_ij * z_ij + z_jk * z_jk))


def range_inconsistency(estimate_i: Position, estimate_j: Position, z: float) -> float:
    """Signed mismatch between an estimated separation and a range reading:
    ``|x_j - x_i|^2 - z^2``.

    Positive when the estimates sit farther apart than the reading supports,
    zero at consistency.
    """
    if z < 0:
        raise ValueError("range reading must be non-negative")
    dx = estimate_j.x - estimate_i.x
    dy = estimate_j.y - estimate_i.y
    return (dx * dx + dy * dy) - z * z
