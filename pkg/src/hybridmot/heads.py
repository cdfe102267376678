"""Training losses of a joint detection/re-id network, with analytic gradients.

Everything here is plain array math so the losses can be checked against
hand computations and finite differences without any network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

EPS = 1e-12


class NoPeaks(ValueError):
    pass


def size_adaptive_sigma(size: tuple[float, float] | None) -> float:
    """Gaussian std for a box of (w, h): a sixth of its diagonal, at least 1."""
    if size is None:
        return 1.0
    return max(1.0, math.hypot(size[0], size[1]) / 6.0)


def render_heatmap_target(centers: Sequence[tuple[float, float]], shape: tuple[int, int],
                          sizes: Sequence[tuple[float, float]] | None = None,
                          sigma_rule: Callable[[tuple[float, float] | None], float] = size_adaptive_sigma,
                          ) -> np.ndarray:
    """Heatmap with a unit Gaussian bump at each (x, y) centre, combined by max.

    Centres are snapped to the nearest cell so every object owns a cell whose
    value is exactly 1.
    """
    h, w = shape
    out = np.zeros((h, w))
    if sizes is not None and len(sizes) != len(centers):
        raise ValueError("sizes must match centers")
    ys, xs = np.mgrid[0:h, 0:w]
    for k, (cx, cy) in enumerate(centers):
        px, py = math.floor(cx + 0.5), math.floor(cy + 0.5)
        if not (0 <= px < w and 0 <= py < h):
            raise ValueError(f"center ({cx}, {cy}) outside {w}x{h} grid")
        sigma = sigma_rule(None if sizes is None else sizes[k])
        bump = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma * sigma))
        np.maximum(out, bump, out=out)
    return out


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("focal exponents must be non-negative")


@dataclass(frozen=True, eq=False)
class HeatmapPair:
    target: np.ndarray
    prediction: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64)
        p = np.asarray(self.prediction, dtype=np.float64)
        if t.shape != p.shape:
            raise ValueError(f"target shape {t.shape} != prediction shape {p.shape}")
        if np.any((t < 0) | (t > 1)):
            raise ValueError("target values must lie in [0, 1]")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "prediction", p)


def _focal_parts(pair: HeatmapPair, params: FocalParams):
    m = pair.target
    peaks = m == 1.0
    n = int(peaks.sum())
    if n == 0:
        raise NoPeaks("target heatmap has no cell equal to 1")
    p = np.clip(pair.prediction, EPS, 1.0 - EPS)
    return m, peaks, n, p


def heatmap_focal_loss(pair: HeatmapPair, params: FocalParams = FocalParams()) -> float:
    """Pixel-wise focal logistic loss, normalised by the number of peak cells.

    Peak cells (target exactly 1) contribute (1-p)^a log p; every other cell
    contributes (1-m)^b p^a log(1-p), which down-weights cells near a peak.
    """
    m, peaks, n, p = _focal_parts(pair, params)
    a, b = params.alpha, params.beta
    pos = (1.0 - p) ** a * np.log(p)
    neg = (1.0 - m) ** b * p ** a * np.log1p(-p)
    return float(-np.where(peaks, pos, neg).sum() / n)


def heatmap_focal_grad(pair: HeatmapPair, params: FocalParams = FocalParams()) -> np.ndarray:
    """d loss / d prediction (zero where the prediction was clamped)."""
    m, peaks, n, p = _focal_parts(pair, params)
    a, b = params.alpha, params.beta
    pos = -a * (1.0 - p) ** np.maximum(a - 1.0, 0.0) * np.log(p) * (a > 0) + (1.0 - p) ** a / p
    neg = (1.0 - m) ** b * (a * p ** np.maximum(a - 1.0, 0.0) * np.log1p(-p) * (a > 0)
                            - p ** a / (1.0 - p))
    g = -np.where(peaks, pos, neg) / n
    clamped = (pair.prediction < EPS) | (pair.prediction > 1.0 - EPS)
    g[clamped] = 0.0
    return g


@dataclass(frozen=True, eq=False)
class BoxRegressionBatch:
    offsets: np.ndarray
    sizes: np.ndarray
    pred_offsets: np.ndarray
    pred_sizes: np.ndarray
    lambda_s: float = 0.1

    def __post_init__(self):
        arrs = []
        for name in ("offsets", "sizes", "pred_offsets", "pred_sizes"):
            a = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            object.__setattr__(self, name, a)
            arrs.append(a)
        n = {len(a) for a in arrs}
        if len(n) != 1 or 0 in n:
            raise ValueError("box batch needs the same number (>= 1) of objects in every list")


def box_loss(batch: BoxRegressionBatch) -> float:
    off = np.abs(batch.offsets - batch.pred_offsets).sum()
    size = np.abs(batch.sizes - batch.pred_sizes).sum()
    return float(off + batch.lambda_s * size)


def box_loss_grad(batch: BoxRegressionBatch) -> tuple[np.ndarray, np.ndarray]:
    """Subgradients w.r.t. (pred_offsets, pred_sizes); 0 at exact agreement."""
    return (np.sign(batch.pred_offsets - batch.offsets),
            batch.lambda_s * np.sign(batch.pred_sizes - batch.sizes))


@dataclass(frozen=True, eq=False)
class IdentityBatch:
    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        lab = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        p = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if lab.shape != p.shape or lab.shape[0] < 1:
            raise ValueError(f"labels {lab.shape} and probs {p.shape} must be equal, non-empty")
        if not (np.all((lab == 0) | (lab == 1)) and np.all(lab.sum(axis=1) == 1)):
            raise ValueError("each label must be one-hot")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each prediction must be a probability distribution")
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "probs", p)


def identity_loss(batch: IdentityBatch) -> float:
    """Cross-entropy of the predicted identity distributions, summed over objects."""
    p = np.maximum(batch.probs, EPS)
    return float(-(batch.labels * np.log(p)).sum())


def identity_loss_grad(batch: IdentityBatch) -> np.ndarray:
    g = -batch.labels / np.maximum(batch.probs, EPS)
    g[batch.probs < EPS] = 0.0
    return g


@dataclass(frozen=True)
class UncertaintyWeights:
    w1: float = 0.0
    w2: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.w1) and math.isfinite(self.w2)):
            raise ValueError("uncertainty weights must be finite")


def total_loss(l_det: float, l_id: float, w: UncertaintyWeights = UncertaintyWeights()) -> float:
    """Detection and identity losses balanced by learned log-variances."""
    if not (math.isfinite(l_det) and math.isfinite(l_id)):
        raise ValueError("losses must be finite")
    return 0.5 * (math.exp(-w.w1) * l_det + math.exp(-w.w2) * l_id + w.w1 + w.w2)


def total_loss_grad(l_det: float, l_id: float, w: UncertaintyWeights = UncertaintyWeights()):
    """Partials w.r.t. (l_det, l_id, w1, w2)."""
    e1, e2 = math.exp(-w.w1), math.exp(-w.w2)
    return 0.5 * e1, 0.5 * e2, 0.5 * (1.0 - e1 * l_det), 0.5 * (1.0 - e2 * l_id)
