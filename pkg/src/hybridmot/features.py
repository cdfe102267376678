"""FAST segment-test corners and per-box keypoint harvesting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox
from .imgcore import GrayImage

# 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)
BORDER = 3
BOX_SHRINK = 0.1


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float = 0.0


def _best_arc_score(mask: np.ndarray, excess: np.ndarray, arc: int) -> np.ndarray:
    """Largest sum of ``excess`` over a circular run of >= ``arc`` set mask bits.

    mask, excess: (n, 16). Returns (n,) with 0 where no qualifying run exists.
    Sums are accumulated element by element from each start so the result
    does not depend on cancellation in prefix sums.
    """
    n = mask.shape[0]
    m2 = np.concatenate([mask, mask], axis=1)
    v2 = np.concatenate([excess, excess], axis=1)
    starts = np.arange(16)
    run = np.ones((n, 16), dtype=bool)
    acc = np.zeros((n, 16))
    best = np.zeros(n)
    for k in range(16):
        run &= m2[:, starts + k]
        acc += v2[:, starts + k]
        if k + 1 >= arc:
            best = np.maximum(best, np.where(run, acc, 0.0).max(axis=1))
    return best


def fast_scores(img: GrayImage, threshold: float = 20.0, arc: int = 9) -> np.ndarray:
    """Dense corner-score map; zero for non-corners and the 3-pixel border."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if not 9 <= arc <= 12:
        raise ValueError(f"arc must be within [9, 12], got {arc}")
    data = img.data
    h, w = data.shape
    scores = np.zeros((h, w))
    if h < 2 * BORDER + 1 or w < 2 * BORDER + 1:
        return scores
    center = data[BORDER:h - BORDER, BORDER:w - BORDER]
    ring = np.stack([
        data[BORDER + dy:h - BORDER + dy, BORDER + dx:w - BORDER + dx] for dx, dy in CIRCLE
    ], axis=-1) - center[..., None]
    bright = ring > threshold
    dark = ring < -threshold
    cand = (bright.sum(axis=-1) >= arc) | (dark.sum(axis=-1) >= arc)
    ys, xs = np.nonzero(cand)
    if len(ys) == 0:
        return scores
    d = ring[ys, xs]
    b = bright[ys, xs]
    k = dark[ys, xs]
    score = np.maximum(
        _best_arc_score(b, np.where(b, d - threshold, 0.0), arc),
        _best_arc_score(k, np.where(k, -d - threshold, 0.0), arc),
    )
    scores[ys + BORDER, xs + BORDER] = score
    return scores


def _strict_local_max(scores: np.ndarray) -> np.ndarray:
    padded = np.pad(scores, 1, mode="constant", constant_values=-np.inf)
    h, w = scores.shape
    keep = scores > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            keep &= scores > padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return keep


def fast_detect(img: GrayImage, threshold: float = 20.0, arc: int = 9,
                nonmax: bool = True) -> list[Keypoint]:
    """FAST segment test corners in row-major order.

    A pixel is a corner when at least ``arc`` contiguous circle pixels are all
    brighter than I(p) + threshold or all darker than I(p) - threshold. Its
    score is the largest sum of (|I(c) - I(p)| - threshold) over such an arc.
    With ``nonmax`` a corner survives only if its score strictly exceeds all
    eight neighbours' scores.
    """
    scores = fast_scores(img, threshold, arc)
    keep = _strict_local_max(scores) if nonmax else scores > 0
    ys, xs = np.nonzero(keep)
    return [Keypoint(float(x), float(y), float(scores[y, x])) for y, x in zip(ys, xs)]


def detect_in_box(img: GrayImage, box: BoundingBox, budget: int = 20,
                  threshold: float = 20.0, arc: int = 9) -> list[Keypoint]:
    """Strongest FAST corners inside ``box`` shrunk by 10% per side.

    Corners are ranked by (score desc, y asc, x asc). When the box holds no
    corner at all, its centre is returned as a single zero-score keypoint so
    the track still has something to follow.
    """
    if budget <= 0 or box.w <= 0 or box.h <= 0:
        return []
    # clip to the image first so the fallback centre is always inside it
    cx1, cy1 = max(box.x, 0.0), max(box.y, 0.0)
    cx2, cy2 = min(box.x2, img.width - 1.0), min(box.y2, img.height - 1.0)
    if cx2 < cx1 or cy2 < cy1:
        return []

    x1 = box.x + BOX_SHRINK * box.w
    x2 = box.x2 - BOX_SHRINK * box.w
    y1 = box.y + BOX_SHRINK * box.h
    y2 = box.y2 - BOX_SHRINK * box.h
    # integer pixel range of the shrunk box, limited to where FAST is defined
    px1 = max(math.ceil(x1), BORDER)
    px2 = min(math.floor(x2), img.width - 1 - BORDER)
    py1 = max(math.ceil(y1), BORDER)
    py2 = min(math.floor(y2), img.height - 1 - BORDER)

    found: list[Keypoint] = []
    if px1 <= px2 and py1 <= py2:
        # pad by circle radius + 1 so scores and suppression match a full-image run
        pad = BORDER + 1
        ox, oy = max(px1 - pad, 0), max(py1 - pad, 0)
        crop = img.data[oy:min(py2 + pad + 1, img.height), ox:min(px2 + pad + 1, img.width)]
        scores = fast_scores(GrayImage(crop), threshold, arc)
        keep = _strict_local_max(scores)
        keep[:py1 - oy, :] = False
        keep[py2 - oy + 1:, :] = False
        keep[:, :px1 - ox] = False
        keep[:, px2 - ox + 1:] = False
        ys, xs = np.nonzero(keep)
        found = [Keypoint(float(x + ox), float(y + oy), float(scores[y, x]))
                 for y, x in zip(ys, xs)]

    if not found:
        c = ((cx1 + cx2) / 2.0, (cy1 + cy2) / 2.0)
        return [Keypoint(c[0], c[1], 0.0)]
    found.sort(key=lambda k: (-k.score, k.y, k.x))
    return found[:budget]
