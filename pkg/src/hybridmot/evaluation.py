"""CLEAR MOT metrics and a synthetic-sequence generator for end-to-end checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .association import Detection, hungarian_solve
from .geometry import BoundingBox, iou_matrix
from .imgcore import GrayImage, bilinear_many

FP = "FP"
FN = "FN"
IDS = "IDS"


class UndefinedMetric(ValueError):
    pass


@dataclass
class ClearCounts:
    fp: int = 0
    fn: int = 0
    ids: int = 0
    gt: int = 0
    matches: int = 0
    sum_distance: float = 0.0

    def __add__(self, other: "ClearCounts") -> "ClearCounts":
        return ClearCounts(self.fp + other.fp, self.fn + other.fn, self.ids + other.ids,
                           self.gt + other.gt, self.matches + other.matches,
                           self.sum_distance + other.sum_distance)


def _check_unique(items, what: str) -> None:
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate ids in {what}: {sorted(ids)}")


def match_frame(gt: Sequence[tuple[int, BoundingBox]], hyp: Sequence[tuple[int, BoundingBox]],
                carry: Mapping[int, int] | None = None, iou_min: float = 0.5):
    """Match one frame's ground truth to hypotheses.

    Correspondences carried over from earlier frames are kept while their IoU
    stays at or above ``iou_min``; the rest are assigned optimally on 1 - IoU.
    A ground-truth object matched to a hypothesis other than the one it was
    last matched to counts as an identity switch.

    Returns:
        matches: list of (gt id, hyp id, 1 - IoU)
        events: list of (kind, gt id or None, hyp id or None), kind in FP / FN / IDS
        carry: updated gt id -> hyp id mapping
    """
    _check_unique(gt, "ground truth")
    _check_unique(hyp, "hypotheses")
    carry = dict(carry or {})
    gt = sorted(gt, key=lambda p: p[0])
    hyp = sorted(hyp, key=lambda p: p[0])
    ious = iou_matrix([b for _, b in gt], [b for _, b in hyp])
    hyp_col = {hid: j for j, (hid, _) in enumerate(hyp)}

    matches = []
    events = []
    used_g: set[int] = set()
    used_h: set[int] = set()
    for i, (gid, _) in enumerate(gt):
        hid = carry.get(gid)
        j = hyp_col.get(hid)
        if j is not None and j not in used_h and ious[i, j] >= iou_min:
            matches.append((gid, hid, 1.0 - ious[i, j]))
            used_g.add(i)
            used_h.add(j)

    rest_g = [i for i in range(len(gt)) if i not in used_g]
    rest_h = [j for j in range(len(hyp)) if j not in used_h]
    if rest_g and rest_h:
        sub = ious[np.ix_(rest_g, rest_h)]
        cost = np.where(sub >= iou_min, 1.0 - sub, np.inf)
        for a, b in hungarian_solve(cost).matches:
            i, j = rest_g[a], rest_h[b]
            gid, hid = gt[i][0], hyp[j][0]
            if gid in carry and carry[gid] != hid:
                events.append((IDS, gid, hid))
            matches.append((gid, hid, 1.0 - ious[i, j]))
            used_g.add(i)
            used_h.add(j)

    for gid, hid, _ in matches:
        carry[gid] = hid
    events += [(FN, gt[i][0], None) for i in range(len(gt)) if i not in used_g]
    events += [(FP, None, hyp[j][0]) for j in range(len(hyp)) if j not in used_h]
    matches.sort()
    return matches, events, carry


def evaluate_sequence(gt: Mapping[int, Sequence[tuple[int, BoundingBox]]],
                      hyp: Mapping[int, Sequence[tuple[int, BoundingBox]]],
                      iou_min: float = 0.5) -> ClearCounts:
    """Accumulate CLEAR counts over all frames present in either input."""
    counts = ClearCounts()
    carry: dict[int, int] = {}
    for frame in sorted(set(gt) | set(hyp)):
        g = gt.get(frame, [])
        matches, events, carry = match_frame(g, hyp.get(frame, []), carry, iou_min)
        counts.gt += len(g)
        counts.matches += len(matches)
        counts.sum_distance += sum(d for _, _, d in matches)
        for kind, _, _ in events:
            if kind == FP:
                counts.fp += 1
            elif kind == FN:
                counts.fn += 1
            else:
                counts.ids += 1
    return counts


def mota(c: ClearCounts) -> float:
    if c.gt < 1:
        raise UndefinedMetric("MOTA is undefined without ground-truth boxes")
    return 1.0 - (c.fp + c.fn + c.ids) / c.gt


def motp(c: ClearCounts) -> float:
    if c.matches < 1:
        raise UndefinedMetric("MOTP is undefined without matches")
    return c.sum_distance / c.matches


# --- synthetic sequences -----------------------------------------------------

class SyntheticSpecError(ValueError):
    pass


def fractal_texture(rng: np.random.Generator, height: int, width: int, lo: float, hi: float,
                    scales: Sequence[float] = (1, 2, 4, 8, 16)) -> np.ndarray:
    """Sum of smoothed noise octaves weighted by scale (roughly 1/f), mapped to [lo, hi]."""
    t = np.zeros((height, width))
    for s in scales:
        t += gaussian_filter(rng.standard_normal((height, width)), s) * s
    span = t.max() - t.min()
    if span == 0:
        return np.full((height, width), (lo + hi) / 2.0)
    return lo + (hi - lo) * (t - t.min()) / span


@dataclass(frozen=True)
class ObjectScript:
    """Motion script of one rectangle; ``box`` is its position at ``first_frame``.

    ``velocity`` is in pixels per frame. ``velocity_changes`` maps a frame to
    the velocity used for the step arriving at that frame and after. During the
    inclusive ``occluded`` range its detections report ``occluded_conf``.
    """

    box: BoundingBox
    velocity: tuple[float, float] = (0.0, 0.0)
    first_frame: int = 1
    last_frame: int | None = None
    occluded: tuple[int, int] | None = None
    occluded_conf: float = 0.3
    velocity_changes: Mapping[int, tuple[float, float]] = field(default_factory=dict)

    def alive(self, frame: int) -> bool:
        return frame >= self.first_frame and (self.last_frame is None or frame <= self.last_frame)

    def boxes(self, n_frames: int) -> dict[int, BoundingBox]:
        out = {}
        x, y = self.box.x, self.box.y
        vx, vy = self.velocity
        last = n_frames if self.last_frame is None else min(self.last_frame, n_frames)
        for f in range(self.first_frame, last + 1):
            if f > self.first_frame:
                vx, vy = self.velocity_changes.get(f, (vx, vy))
                x += vx
                y += vy
            out[f] = BoundingBox(x, y, self.box.w, self.box.h)
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    n_frames: int = 0
    width: int = 320
    height: int = 240
    objects: tuple[ObjectScript, ...] = ()
    seed: int = 0
    det_jitter: float = 1.0
    det_conf: float = 0.9


@dataclass
class SyntheticSequence:
    frames: list[GrayImage]
    gt: dict[int, list[tuple[int, BoundingBox]]]
    detections: dict[int, list[Detection]]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSequence:
    """Render textured rectangles moving over a darker textured background.

    Ground truth follows the scripts exactly (ids are 1-based script order).
    Detections are the ground-truth boxes with Gaussian jitter, emitted for
    every frame. Later scripts are drawn on top of earlier ones.
    """
    n = spec.n_frames
    if n <= 0:
        return SyntheticSequence([], {}, {})
    tracks = [obj.boxes(n) for obj in spec.objects]
    for k, boxes in enumerate(tracks):
        for f, b in boxes.items():
            if b.x < 0 or b.y < 0 or b.x2 > spec.width or b.y2 > spec.height:
                raise SyntheticSpecError(
                    f"object {k + 1} leaves the {spec.width}x{spec.height} image at frame {f}")

    rng = np.random.default_rng(spec.seed)
    background = fractal_texture(rng, spec.height, spec.width, 20.0, 90.0)
    patches = [fractal_texture(rng, int(math.ceil(o.box.h)) + 2, int(math.ceil(o.box.w)) + 2,
                               110.0, 250.0) for o in spec.objects]

    frames: list[GrayImage] = []
    gt: dict[int, list[tuple[int, BoundingBox]]] = {}
    dets: dict[int, list[Detection]] = {}
    for f in range(1, n + 1):
        img = background.copy()
        gt[f] = []
        dets[f] = []
        for k, (obj, boxes) in enumerate(zip(spec.objects, tracks)):
            b = boxes.get(f)
            if b is None:
                continue
            x0, x1 = int(math.ceil(b.x)), int(math.ceil(b.x2)) - 1
            y0, y1 = int(math.ceil(b.y)), int(math.ceil(b.y2)) - 1
            if x1 >= x0 and y1 >= y0:
                yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
                img[y0:y1 + 1, x0:x1 + 1] = bilinear_many(
                    patches[k], (xx - b.x).ravel(), (yy - b.y).ravel()).reshape(xx.shape)
            gt[f].append((k + 1, b))

            occluded = obj.occluded is not None and obj.occluded[0] <= f <= obj.occluded[1]
            jx, jy, jw, jh = rng.normal(0.0, spec.det_jitter, 4) if spec.det_jitter > 0 else (0, 0, 0, 0)
            x1d = min(max(b.x + jx, 0.0), spec.width - 1.0)
            y1d = min(max(b.y + jy, 0.0), spec.height - 1.0)
            x2d = min(max(b.x2 + jx + jw, x1d + 1.0), float(spec.width))
            y2d = min(max(b.y2 + jy + jh, y1d + 1.0), float(spec.height))
            conf = obj.occluded_conf if occluded else spec.det_conf
            dets[f].append(Detection(BoundingBox.from_corners(x1d, y1d, x2d, y2d), conf))
        frames.append(GrayImage(np.clip(img, 0.0, 255.0)))
    return SyntheticSequence(frames, gt, dets)


def demo_spec(seed: int = 0, n_frames: int = 100) -> SyntheticSpec:
    """Uncrowded scene with steady walkers plus arrivals and departures.

    Arrivals happen on frames 2 and 62 and departures after frame 61. Frames 1
    and 61 are keyframes for every skip in 0..4, so the number of frames an
    arrival goes unseen (or a departed object lingers) grows with skip instead
    of depending on how event frames happen to line up with keyframes.
    """
    if n_frames < 100:
        raise ValueError("demo scene needs at least 100 frames")
    objects = (
        ObjectScript(BoundingBox(20, 40, 40, 64), (2.0, 0.5)),
        ObjectScript(BoundingBox(250, 150, 36, 70), (-1.5, -0.3)),
        ObjectScript(BoundingBox(140, 16, 30, 52), (0.2, 1.0)),
        ObjectScript(BoundingBox(40, 160, 34, 60), (1.2, 0.0), first_frame=2, last_frame=61),
        ObjectScript(BoundingBox(270, 10, 32, 56), (-1.0, 0.8), first_frame=2, last_frame=61),
        ObjectScript(BoundingBox(60, 20, 32, 56), (1.0, 0.8), first_frame=62),
        ObjectScript(BoundingBox(250, 170, 30, 58), (-0.5, -0.4), first_frame=62),
    )
    return SyntheticSpec(n_frames=n_frames, width=320, height=240, objects=objects, seed=seed)


def occlusion_spec(seed: int = 0) -> SyntheticSpec:
    """Two objects crossing; the rear one is only weakly detected for 3 frames.

    Object 1 walks right and halts just as object 2 passes in front of it, so
    during frames 11-13 its detections score 0.3. A tracker that ignores weak
    detections keeps extrapolating the old velocity and can no longer pick the
    object up once it is clearly visible again.
    """
    objects = (
        ObjectScript(BoundingBox(100, 100, 30, 60), (6.0, 0.0), occluded=(11, 13),
                     velocity_changes={11: (0.0, 0.0)}),
        ObjectScript(BoundingBox(240, 90, 34, 70), (-8.0, 0.0)),
    )
    return SyntheticSpec(n_frames=30, width=320, height=240, objects=objects, seed=seed)
