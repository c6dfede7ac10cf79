"""Error metrics, alignment and flip diagnostics, gain-bound formulas, and
empirical stability diagnostics for the round-update map.

The headline metric is the accumulated localization error (ALE): the sum over
ordered node pairs of the absolute mismatch between true and estimated
inter-node distances. It is invariant under rigid motions and global
reflection of the estimate set, which makes it the right score for anchor-free
relative localization.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .geometry import NodeId, Position, SensingGraph

__all__ = [
    "AlignmentResult",
    "BetaInterval",
    "NoiseEstimates",
    "SpectralDiagnostic",
    "ale",
    "beta_bounds",
    "default_flip_threshold",
    "detect_flips",
    "estimated_angle",
    "eta_shadow",
    "procrustes_align",
    "spectral_diagnostic",
    "spectral_stability",
]


def _as_array(points: list[Position]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in points], dtype=float)


def _distance_matrix(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)


def _ale_from_matrices(dm_est: np.ndarray, dm_true: np.ndarray) -> float:
    v = float(np.abs(dm_est - dm_true).sum())
    return v if math.isfinite(v) else math.inf


def ale(truth: list[Position], estimates: list[Position]) -> float:
    """Accumulated localization error over ordered node pairs.

    Each unordered pair contributes twice, exactly as the double sum reads.
    """
    if len(truth) != len(estimates):
        raise ValueError("truth and estimates must have equal length")
    if len(truth) < 2:
        raise ValueError("ALE needs at least two nodes")
    return _ale_from_matrices(_distance_matrix(_as_array(estimates)), _distance_matrix(_as_array(truth)))


@dataclass
class AlignmentResult:
    """Best rigid fit of an estimate set onto the ground truth.

    ``rotation`` is orthogonal (determinant +1, or -1 when a reflection fit
    won); aligned points are ``rotation @ e + translation``.
    """

    rotation: np.ndarray
    translation: Position
    per_node_error: list[float]
    rmse: float

    def transform(self, points: list[Position]) -> list[Position]:
        arr = _as_array(points) @ self.rotation.T
        return [
            Position(float(x + self.translation.x), float(y + self.translation.y))
            for x, y in arr
        ]


def procrustes_align(
    truth: list[Position],
    estimates: list[Position],
    allow_reflection: bool = True,
) -> AlignmentResult:
    """Least-squares rigid alignment (rotation + translation) of estimates
    onto truth.

    With ``allow_reflection`` both orientation classes are solved and the one
    with lower rmse wins; range-only relative localization cannot distinguish
    a configuration from its mirror image, so reflected fits are legitimate.
    """
    if len(truth) != len(estimates):
        raise ValueError("truth and estimates must have equal length")
    if len(truth) < 2:
        raise ValueError("alignment needs at least two nodes")
    T = _as_array(truth)
    E = _as_array(estimates)
    tc = T.mean(axis=0)
    ec = E.mean(axis=0)
    T0 = T - tc
    E0 = E - ec
    if float(np.abs(T0).max(initial=0.0)) < 1e-15 or float(np.abs(E0).max(initial=0.0)) < 1e-15:
        raise ValueError("degenerate configuration: all points coincident")

    H = T0.T @ E0
    U, _, Vt = np.linalg.svd(H)
    d = float(np.sign(np.linalg.det(U @ Vt)))
    if d == 0.0:
        d = 1.0

    orientations = [1.0, -1.0] if allow_reflection else [1.0]
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for flip in orientations:
        R = U @ np.diag([1.0, flip * d]) @ Vt
        t = tc - R @ ec
        errs = np.linalg.norm(E @ R.T + t - T, axis=1)
        rmse = float(np.sqrt(np.mean(errs**2)))
        if best is None or rmse < best[0]:
            best = (rmse, R, errs)
    rmse, R, errs = best
    t = tc - R @ ec
    return AlignmentResult(
        rotation=R,
        translation=Position(float(t[0]), float(t[1])),
        per_node_error=[float(e) for e in errs],
        rmse=rmse,
    )


def default_flip_threshold(truth: list[Position]) -> float:
    """25% of the minimum inter-node ground-truth distance."""
    if len(truth) < 2:
        raise ValueError("need at least two nodes")
    dm = _distance_matrix(_as_array(truth))
    np.fill_diagonal(dm, np.inf)
    return 0.25 * float(dm.min())


def detect_flips(alignment: AlignmentResult, threshold: float) -> set[NodeId]:
    """Node ids whose residual after reflection-allowed alignment exceeds the
    threshold; a globally mirrored estimate set therefore reports no flips.
    """
    return {i for i, e in enumerate(alignment.per_node_error) if e > threshold}


@dataclass(frozen=True)
class NoiseEstimates:
    """Per-edge noise terms feeding the gain-bound formulas.

    ``eta`` is the global scalar used when an edge has no explicit override;
    ``epsilon`` guards the reciprocal in the lower gain bound.
    """

    eta: float = 0.05
    per_edge: Mapping[tuple[NodeId, NodeId], float] | None = None
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be finite and > 0")

    def eta_for(self, i: NodeId, j: NodeId) -> float:
        if self.per_edge is not None:
            key = (i, j) if i < j else (j, i)
            if key in self.per_edge:
                return self.per_edge[key]
        return self.eta


_CLAMP_TOLERANCE = 1e-9


def estimated_angle(
    d_ab: float,
    d_ac: float,
    d_bc: float,
    eta_ab: float = 0.0,
    eta_ac: float = 0.0,
    eta_bc: float = 0.0,
) -> float:
    """Law-of-cosines angle at ``a`` with noise terms folded into each
    squared distance.

    The cosine argument is clamped into [-1, 1] within a 1e-9 tolerance;
    anything further out is rejected rather than silently saturated.
    """
    qa = d_ab * d_ab + eta_ab
    qb = d_ac * d_ac + eta_ac
    radicand = qa * qb
    if radicand < 0:
        raise ValueError("negative radicand under the angle denominator")
    den = 2.0 * math.sqrt(radicand)
    if den == 0:
        raise ValueError("zero denominator in angle estimate")
    num = qa + qb - (d_bc * d_bc + eta_bc)
    ratio = num / den
    if ratio > 1.0:
        if ratio - 1.0 > _CLAMP_TOLERANCE:
            raise ValueError(f"cosine argument {ratio} out of range")
        ratio = 1.0
    elif ratio < -1.0:
        if -1.0 - ratio > _CLAMP_TOLERANCE:
            raise ValueError(f"cosine argument {ratio} out of range")
        ratio = -1.0
    return math.acos(ratio)


def eta_shadow(
    d_kj: float,
    d_ij: float,
    eta_kj: float,
    eta_ij: float,
    a_hkj: float,
    a_hij: float,
    est_a_hkj: float,
    est_a_hij: float,
) -> float:
    """Noise term carried by a shadow edge, from the two real legs' distances,
    noise terms, and true vs estimated angles at a shared reference node.

    The reference node enters only through the supplied angles, so callers
    choose it explicitly.
    """
    vals = (d_kj, d_ij, eta_kj, eta_ij, a_hkj, a_hij, est_a_hkj, est_a_hij)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("inputs must be finite")
    radicand = (d_kj * d_kj + eta_kj) * (d_ij * d_ij + eta_ij)
    if radicand < 0:
        raise ValueError("negative radicand in shadow noise term")
    return (
        2.0 * d_kj * d_ij * math.cos(a_hkj - a_hij)
        + eta_kj
        + eta_ij
        - 2.0 * math.sqrt(radicand) * math.cos(est_a_hkj - est_a_hij)
    )


@dataclass(frozen=True)
class BetaInterval:
    """Admissible shadow-gain interval; infeasible when the printed bounds
    cross (which they do whenever the noise term dominates epsilon)."""

    lower: float
    upper: float
    feasible: bool

    def __post_init__(self):
        if self.feasible != (self.lower <= self.upper):
            raise ValueError("feasible flag inconsistent with bounds")


def beta_bounds(d_ij: float, d_jk: float, eta_ik: float, epsilon: float) -> BetaInterval:
    """Shadow-gain bounds: ``1/max(eta_ik, epsilon) <= beta <=
    1/((d_ij + d_jk)/2 + eta_ik)``, exactly as printed, with a feasibility
    flag instead of any reconciliation."""
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValueError("epsilon must be finite and > 0")
    if d_ij < 0 or d_jk < 0:
        raise ValueError("distances must be non-negative")
    lower = 1.0 / max(eta_ik, epsilon)
    den = (d_ij + d_jk) / 2.0 + eta_ik
    if den <= 0:
        raise ValueError("upper-bound denominator must be positive")
    upper = 1.0 / den
    return BetaInterval(lower=lower, upper=upper, feasible=lower <= upper)


@dataclass
class SpectralDiagnostic:
    """Linearization report for one synchronous round at ground truth.

    ``spectral_radius`` is taken on the quotient of the state space by the
    rigid-motion directions (global translations and rotation), which the
    update map leaves exactly neutral; those modes carry eigenvalue 1 by
    construction and say nothing about convergence of the relative
    configuration. ``eigenvalues`` are the quotient-map eigenvalues;
    ``shift_in_band`` reports whether every shifted eigenvalue (lambda - 1)
    has real part inside (-2, 0).
    """

    spectral_radius: float
    eigenvalues: np.ndarray
    shift_in_band: bool


def _rigid_motion_complement(truth_arr: np.ndarray) -> np.ndarray:
    n = truth_arr.shape[0]
    tx = np.zeros(2 * n)
    tx[0::2] = 1.0
    ty = np.zeros(2 * n)
    ty[1::2] = 1.0
    rot = np.empty(2 * n)
    rot[0::2] = -truth_arr[:, 1]
    rot[1::2] = truth_arr[:, 0]
    B = np.stack([tx, ty, rot], axis=1)
    U, s, _ = np.linalg.svd(B, full_matrices=True)
    rank = int((s > 1e-12 * max(1.0, s.max())).sum())
    return U[:, rank:]


def spectral_diagnostic(
    graph: SensingGraph,
    truth: list[Position],
    gains,
    variant,
    shadow_lambda_form: str = "pair",
    step: float = 1e-6,
) -> SpectralDiagnostic:
    """Numerical Jacobian (central differences) of the noiseless round map at
    ground truth, reduced to the rigid-motion quotient, with its spectrum."""
    from .protocol import round_operator

    apply = round_operator(graph, truth, gains, variant, shadow_lambda_form)
    truth_arr = _as_array(truth)
    x0 = truth_arr.reshape(-1)
    dim = x0.shape[0]
    J = np.empty((dim, dim))
    for m in range(dim):
        e = np.zeros(dim)
        e[m] = step
        J[:, m] = (apply(x0 + e) - apply(x0 - e)) / (2.0 * step)

    W = _rigid_motion_complement(truth_arr)
    C = W.T @ J @ W
    eigs = np.linalg.eigvals(C) if C.size else np.array([], dtype=complex)
    radius = float(np.abs(eigs).max()) if eigs.size else 0.0
    shifted = eigs - 1.0
    in_band = bool(np.all((shifted.real > -2.0) & (shifted.real < 0.0))) if eigs.size else True
    return SpectralDiagnostic(spectral_radius=radius, eigenvalues=eigs, shift_in_band=in_band)


def spectral_stability(
    graph: SensingGraph,
    truth: list[Position],
    gains,
    variant,
    shadow_lambda_form: str = "pair",
    step: float = 1e-6,
) -> float:
    """Spectral radius of the linearized round map on the rigid-motion
    quotient; values below 1 predict local convergence of the relative
    configuration."""
    return spectral_diagnostic(graph, truth, gains, variant, shadow_lambda_form, step).spectral_radius
