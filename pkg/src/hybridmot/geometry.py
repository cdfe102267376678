"""Boxes, IoU, 4-DOF similarity transforms and their RANSAC estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class DegenerateSample(ValueError):
    pass


class NotEnoughPoints(ValueError):
    pass


class NoConsensus(RuntimeError):
    pass


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as (left, top, width, height) in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box size {vals}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(x1, y1, max(x2 - x1, 0.0), max(y2 - y1, 0.0))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point:
        return Point(self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation ``theta`` (radians), isotropic scale ``s`` and translation."""

    theta: float = 0.0
    s: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")
        # keep theta in (-pi, pi]
        theta = math.atan2(math.sin(self.theta), math.cos(self.theta))
        if theta == -math.pi:
            theta = math.pi
        object.__setattr__(self, "theta", theta)

    @property
    def matrix(self) -> np.ndarray:
        """The 2x3 matrix [[s cos, -s sin, tx], [s sin, s cos, ty]]."""
        c = math.cos(self.theta) * self.s
        sn = math.sin(self.theta) * self.s
        return np.array([[c, -sn, self.tx], [sn, c, self.ty]])

    @classmethod
    def from_params(cls, a: float, b: float, tx: float, ty: float) -> "SimilarityTransform":
        """Build from the linear parameterisation a = s cos(theta), b = s sin(theta)."""
        s = math.hypot(a, b)
        if s == 0.0:
            raise DegenerateSample("zero scale")
        return cls(math.atan2(b, a), s, tx, ty)


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 100
    inlier_threshold: float = 2.0
    # None means max(2, ceil(n / 2)) for n correspondences
    min_inliers: int | None = None
    seed: int | Sequence[int] = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.min_inliers is not None and self.min_inliers < 2:
            raise ValueError("min_inliers must be >= 2")

    def required_inliers(self, n: int) -> int:
        if self.min_inliers is not None:
            return self.min_inliers
        return max(2, math.ceil(0.5 * n))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    # rounding in the corner arithmetic can nudge identical boxes past 1
    return min(inter / union, 1.0)


def iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    ta = np.array([(x.x, x.y, x.x2, x.y2) for x in a], dtype=np.float64)
    tb = np.array([(x.x, x.y, x.x2, x.y2) for x in b], dtype=np.float64)
    iw = np.minimum(ta[:, None, 2], tb[None, :, 2]) - np.maximum(ta[:, None, 0], tb[None, :, 0])
    ih = np.minimum(ta[:, None, 3], tb[None, :, 3]) - np.maximum(ta[:, None, 1], tb[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (ta[:, 2] - ta[:, 0]) * (ta[:, 3] - ta[:, 1])
    area_b = (tb[:, 2] - tb[:, 0]) * (tb[:, 3] - tb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.minimum(out, 1.0)


def solve_similarity_minimal(src: Sequence[Point], dst: Sequence[Point]) -> SimilarityTransform:
    """Exact transform taking two source points onto two destination points."""
    p0, p1 = complex(*src[0]), complex(*src[1])
    q0, q1 = complex(*dst[0]), complex(*dst[1])
    if p1 == p0:
        raise DegenerateSample("coincident source points")
    z = (q1 - q0) / (p1 - p0)
    if z == 0:
        raise DegenerateSample("coincident destination points")
    t = (q0 + q1) / 2 - z * (p0 + p1) / 2
    return SimilarityTransform(math.atan2(z.imag, z.real), abs(z), t.real, t.imag)


def apply_transform(m: SimilarityTransform, p: Point) -> Point:
    x, y = m.matrix @ np.array([p[0], p[1], 1.0])
    return Point(float(x), float(y))


def transform_points(m: SimilarityTransform, pts: np.ndarray) -> np.ndarray:
    mat = m.matrix
    return pts @ mat[:, :2].T + mat[:, 2]


def warp_bbox(box: BoundingBox, m: SimilarityTransform) -> BoundingBox:
    """Map the top-left and bottom-right corners through ``m``.

    Only those two corners are moved, so under rotation the result is not the
    tight bound of the rotated box. Corners are re-sorted afterwards since a
    rotation near pi swaps them.
    """
    a = apply_transform(m, Point(box.x, box.y))
    b = apply_transform(m, Point(box.x2, box.y2))
    return BoundingBox.from_corners(min(a.x, b.x), min(a.y, b.y), max(a.x, b.x), max(a.y, b.y))


def fit_similarity_lsq(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity (no reflection) between two (n, 2) point sets."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    norm = float(np.sum(a * a))
    if norm == 0.0:
        raise DegenerateSample("all source points coincide")
    dot = float(np.sum(a * b))
    cross = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    ca, sb = dot / norm, cross / norm
    tx = mu_d[0] - (ca * mu_s[0] - sb * mu_s[1])
    ty = mu_d[1] - (sb * mu_s[0] + ca * mu_s[1])
    return SimilarityTransform.from_params(ca, sb, tx, ty)


def _residuals(m: SimilarityTransform, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(transform_points(m, src) - dst, axis=1)


def estimate_similarity_ransac(src, dst, params: RansacParams = RansacParams()):
    """Robustly fit a similarity transform to point correspondences.

    Each trial solves the transform exactly from two random correspondences
    and counts points reprojected within ``inlier_threshold``. The best trial
    (most inliers, then lowest squared residual) is refitted by least squares
    on its inliers.

    Returns:
        (SimilarityTransform, boolean inlier mask over the input points)

    Raises:
        NotEnoughPoints: fewer than two correspondences.
        NoConsensus: no trial reached the required inlier count.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"{len(src)} source points but {len(dst)} destination points")
    n = len(src)
    if n < 2:
        raise NotEnoughPoints(f"need at least 2 correspondences, got {n}")

    rng = np.random.default_rng(params.seed)
    thr = params.inlier_threshold
    # all trials at once: distinct index pairs, models in complex form q = z p + t
    i = rng.integers(0, n, size=params.iterations)
    j = (i + rng.integers(1, n, size=params.iterations)) % n
    p = src[:, 0] + 1j * src[:, 1]
    q = dst[:, 0] + 1j * dst[:, 1]
    dp = p[j] - p[i]
    valid = dp != 0
    z = np.where(valid, (q[j] - q[i]) / np.where(valid, dp, 1.0), 0.0)
    valid &= z != 0
    best = None
    best_key = None
    if valid.any():
        z, i, j = z[valid], i[valid], j[valid]
        t = (q[i] + q[j]) / 2 - z * (p[i] + p[j]) / 2
        res = np.abs(z[:, None] * p[None, :] + t[:, None] - q[None, :])
        masks = res <= thr
        counts = masks.sum(axis=1)
        sse = np.where(masks, res ** 2, 0.0).sum(axis=1)
        # most inliers, then least squared residual, then earliest trial
        k = int(np.lexsort((sse, -counts))[0])
        best_key = (int(counts[k]), -float(sse[k]))
        best = (SimilarityTransform(float(np.angle(z[k])), float(abs(z[k])),
                                    float(t[k].real), float(t[k].imag)), masks[k])

    need = params.required_inliers(n)
    if best is None or best_key[0] < need:
        found = 0 if best_key is None else best_key[0]
        raise NoConsensus(f"best model has {found} inliers, need {need}")

    model, mask = best
    try:
        refined = fit_similarity_lsq(src[mask], dst[mask])
    except DegenerateSample:
        return model, mask
    new_mask = _residuals(refined, src, dst) <= thr
    if new_mask.sum() >= mask.sum():
        return refined, new_mask
    return refined, mask
