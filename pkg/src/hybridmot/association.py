"""Track/detection types, cost matrices, Hungarian assignment and Byte association."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .features import Keypoint
from .geometry import BoundingBox, iou_matrix
from .motion import CHI2_GATE_4DOF, KalmanState, mahalanobis_gate

FORBIDDEN = np.inf

IOU_FLOOR = 0.1
FUSE_LAMBDA = 0.98
STAGE1_MAX_COST = 0.7
STAGE2_MAX_COST = 0.5
# detections at or below this confidence are dropped before association
SCORE_FLOOR = 0.1


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


def _unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64).ravel()
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("embedding must be a finite non-zero vector")
    return v / n


@dataclass(frozen=True, eq=False)
class Detection:
    box: BoundingBox
    confidence: float
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.embedding is not None:
            e = np.asarray(self.embedding, dtype=np.float64).ravel()
            if abs(np.linalg.norm(e) - 1.0) > 1e-6:
                raise ValueError("detection embedding must be unit-norm")
            object.__setattr__(self, "embedding", e)


@dataclass(eq=False)
class Track:
    id: int
    kalman: KalmanState
    box: BoundingBox
    state: TrackState = TrackState.ACTIVE
    embedding: np.ndarray | None = None
    keypoints: list[Keypoint] = field(default_factory=list)
    frames_since_update: int = 0
    age: int = 0

    @property
    def predicted_box(self) -> BoundingBox:
        return self.kalman.box()

    def blend_embedding(self, emb: np.ndarray | None, momentum: float = 0.9) -> None:
        if emb is None:
            return
        if self.embedding is None:
            self.embedding = _unit(emb)
        else:
            self.embedding = _unit(momentum * self.embedding + (1.0 - momentum) * emb)


@dataclass
class AssociationOutcome:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    # Byte only: low-confidence detections left unmatched, plus those under the floor
    unmatched_low: list[int] = field(default_factory=list)


def hungarian_solve(costs, max_cost: float | None = None) -> AssociationOutcome:
    """Optimal assignment that ignores FORBIDDEN (infinite) entries.

    Among all matchings using only allowed entries, the result has the largest
    possible number of pairs and, among those, the least total cost. Entries
    above ``max_cost`` are treated as forbidden.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {costs.shape}")
    if np.isnan(costs).any():
        raise ValueError("cost matrix contains NaN")
    rows, cols = costs.shape
    allowed = np.isfinite(costs)
    if max_cost is not None:
        allowed &= costs <= max_cost
    if rows == 0 or cols == 0 or not allowed.any():
        return AssociationOutcome([], list(range(rows)), list(range(cols)))

    finite = costs[allowed]
    # larger than any achievable difference in total allowed cost
    big = 2.0 * (min(rows, cols) + 1) * (np.abs(finite).max() + 1.0)
    filled = np.where(allowed, costs, big)
    ri, ci = linear_sum_assignment(filled)
    matches = [(int(r), int(c)) for r, c in zip(ri, ci) if allowed[r, c]]
    used_r = {r for r, _ in matches}
    used_c = {c for _, c in matches}
    return AssociationOutcome(
        matches,
        [r for r in range(rows) if r not in used_r],
        [c for c in range(cols) if c not in used_c],
    )


def iou_cost(tracks: Sequence[BoundingBox], dets: Sequence[BoundingBox]) -> np.ndarray:
    ious = iou_matrix(tracks, dets)
    cost = 1.0 - ious
    cost[ious < IOU_FLOOR] = FORBIDDEN
    return cost


def fused_cost(tracks: Sequence[Track], dets: Sequence[Detection],
               lam: float = FUSE_LAMBDA) -> np.ndarray:
    """Appearance + motion cost; pairs lacking an embedding fall back to IoU cost."""
    cost = iou_cost([t.predicted_box for t in tracks], [d.box for d in dets])
    if not tracks or not dets:
        return cost
    with_emb = [j for j, d in enumerate(dets) if d.embedding is not None]
    if not with_emb:
        return cost
    det_emb = np.stack([dets[j].embedding for j in with_emb])
    det_boxes = [dets[j].box for j in with_emb]
    for i, t in enumerate(tracks):
        if t.embedding is None:
            continue
        d2 = mahalanobis_gate(t.kalman, det_boxes)
        appearance = 1.0 - det_emb @ t.embedding
        row = lam * appearance + (1.0 - lam) * (d2 / CHI2_GATE_4DOF)
        row = np.maximum(row, 0.0)
        row[d2 > CHI2_GATE_4DOF] = FORBIDDEN
        cost[i, with_emb] = row
    return cost


def byte_associate(tracks: Sequence[Track], dets: Sequence[Detection], tau: float = 0.5,
                   tau_init: float = 0.6, second_stage: bool = True):
    """Two-stage Byte association of predicted tracks with one frame's detections.

    Stage one matches every track against detections scoring above ``tau``
    using the fused cost. Tracks left over get a second chance against the
    low-scoring detections, by IoU only. High-scoring detections nobody took
    become new-track candidates if they also reach ``tau_init``.

    Returns:
        (AssociationOutcome over the original indices, candidate detection indices)
    """
    high = [j for j, d in enumerate(dets) if d.confidence > tau]
    low = [j for j, d in enumerate(dets) if SCORE_FLOOR < d.confidence <= tau]

    first = hungarian_solve(fused_cost(tracks, [dets[j] for j in high]), STAGE1_MAX_COST)
    matches = [(i, high[j]) for i, j in first.matches]
    t_remain = first.unmatched_tracks
    d_remain = [high[j] for j in first.unmatched_detections]

    low_left = list(low)
    t_final = t_remain
    if second_stage and t_remain and low:
        cost = iou_cost([tracks[i].predicted_box for i in t_remain], [dets[j].box for j in low])
        second = hungarian_solve(cost, STAGE2_MAX_COST)
        matches += [(t_remain[i], low[j]) for i, j in second.matches]
        t_final = [t_remain[i] for i in second.unmatched_tracks]
        low_left = [low[j] for j in second.unmatched_detections]

    in_play = set(high) | set(low)
    discarded = [j for j in range(len(dets)) if j not in in_play]
    outcome = AssociationOutcome(
        sorted(matches),
        sorted(t_final),
        sorted(d_remain),
        sorted(low_left + discarded),
    )
    candidates = [j for j in outcome.unmatched_detections if dets[j].confidence >= tau_init]
    return outcome, candidates
