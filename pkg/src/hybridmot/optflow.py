"""Sparse pyramidal Lucas-Kanade optical flow."""

from __future__ import annotations

import enum
import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .features import Keypoint
from .imgcore import Pyramid


class FlowStatus(enum.Enum):
    TRACKED = "tracked"
    LOST_OUT_OF_BOUNDS = "lost_out_of_bounds"
    LOST_LOW_TEXTURE = "lost_low_texture"
    LOST_HIGH_ERROR = "lost_high_error"


@dataclass(frozen=True)
class FlowParams:
    levels: int = 3
    window_radius: int = 7
    max_iterations: int = 10
    epsilon: float = 0.01
    # min eigenvalue of the structure tensor per window pixel, intensities scaled to [0, 1]
    min_eigenvalue: float = 1e-4
    # mean absolute residual, 0-255 intensity units
    max_error: float = 20.0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.window_radius < 2:
            raise ValueError("window_radius must be >= 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class FlowResult:
    point: Keypoint
    status: FlowStatus
    error: float

    @property
    def tracked(self) -> bool:
        return self.status is FlowStatus.TRACKED


def _gradients(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(data)
    return gx, gy


def _inside(cx: np.ndarray, cy: np.ndarray, r: int, w: int, h: int) -> np.ndarray:
    """Whether the whole (2r+1)^2 window centred at each point lies within the image."""
    return (cx - r >= 0) & (cx + r <= w - 1) & (cy - r >= 0) & (cy + r <= h - 1)


class _Sampler:
    """Bilinear window sampling from an edge-replicated copy of an image.

    Every sample of a window shares the fractional offset of its centre, so a
    window is one (2r+2)^2 integer patch blended with four scalar weights.
    Inside the image this equals plain bilinear sampling; outside it equals
    sampling at the clamped coordinate.
    """

    def __init__(self, data: np.ndarray, r: int):
        self.r = r
        # wide enough that any centre in [-r-1, w+r] has its whole patch in the copy
        self.pad = 2 * r + 2
        self.h, self.w = data.shape
        padded = np.pad(data.astype(np.float32), self.pad, mode="edge")
        self.windows = sliding_window_view(padded, (2 * r + 2, 2 * r + 2))

    def __call__(self, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
        r, pad = self.r, self.pad
        cx = np.clip(cx, -r - 1.0, self.w + r)
        cy = np.clip(cy, -r - 1.0, self.h + r)
        fx0 = np.floor(cx)
        fy0 = np.floor(cy)
        fx = (cx - fx0)[:, None, None]
        fy = (cy - fy0)[:, None, None]
        bx = fx0.astype(np.intp) - r + pad
        by = fy0.astype(np.intp) - r + pad
        patch = self.windows[by, bx]
        rows = patch[:, :, 1:] - patch[:, :, :-1]
        rows *= fx
        rows += patch[:, :, :-1]
        out = rows[:, 1:] - rows[:, :-1]
        out *= fy
        out += rows[:, :-1]
        return out.reshape(len(cx), -1)


# per-pyramid samplers, so a frame's padded copies and gradients are built once
# even though it is used as "next" on one step and "prev" on the following one
_SAMPLERS: "weakref.WeakKeyDictionary[Pyramid, dict]" = weakref.WeakKeyDictionary()


def _samplers(pyr: Pyramid, level: int, r: int, kind: str) -> _Sampler:
    cache = _SAMPLERS.setdefault(pyr, {})
    key = (level, r, kind)
    if key not in cache:
        data = pyr[level].data
        if kind == "img":
            cache[key] = _Sampler(data, r)
        else:
            gx, gy = _gradients(data)
            cache[(level, r, "gx")] = _Sampler(gx, r)
            cache[(level, r, "gy")] = _Sampler(gy, r)
    return cache[key]


def lk_track_points(prev: Pyramid, next: Pyramid, points: Sequence[Keypoint],
                    params: FlowParams = FlowParams()) -> list[FlowResult]:
    """Track ``points`` from ``prev`` into ``next`` coarse-to-fine.

    Gradients come from the previous frame only. Coarse levels sample with
    border replication so points near the edge still get a coarse estimate;
    only the finest level decides the status, and there any window sample
    outside the image marks the point lost. A coarse level whose window lacks
    texture leaves the flow guess unchanged.
    """
    if prev.base.shape != next.base.shape:
        raise ValueError(f"pyramid size mismatch: {prev.base.shape} vs {next.base.shape}")
    n = len(points)
    if n == 0:
        return []
    n_levels = min(params.levels, len(prev), len(next))

    pts = np.array([(p.x, p.y) for p in points], dtype=np.float64)
    r = params.window_radius
    area = float((2 * r + 1) ** 2)

    flow = np.zeros((n, 2))
    status = np.full(n, FlowStatus.TRACKED, dtype=object)
    error = np.zeros(n)

    for level in range(n_levels - 1, -1, -1):
        finest = level == 0
        img_i = prev[level].data
        h, w = img_i.shape
        sample_i = _samplers(prev, level, r, "img")
        sample_j = _samplers(next, level, r, "img")

        alive = np.array([s is FlowStatus.TRACKED for s in status])
        c = pts / (2 ** level)
        if finest:
            ok = alive & _inside(c[:, 0], c[:, 1], r, w, h)
            status[alive & ~ok] = FlowStatus.LOST_OUT_OF_BOUNDS
        else:
            ok = alive & _inside(c[:, 0], c[:, 1], 0, w, h)
        idx = np.nonzero(ok)[0]
        if len(idx):
            cx, cy = c[idx, 0], c[idx, 1]
            tpl = sample_i(cx, cy)
            gx = _samplers(prev, level, r, "gx")(cx, cy)
            gy = _samplers(prev, level, r, "gy")(cx, cy)
            gxx = np.sum(gx * gx, axis=1)
            gxy = np.sum(gx * gy, axis=1)
            gyy = np.sum(gy * gy, axis=1)
            det = gxx * gyy - gxy * gxy
            half_tr = 0.5 * (gxx + gyy)
            min_eig = half_tr - np.sqrt(np.maximum(half_tr ** 2 - det, 0.0))
            textured = min_eig / (area * 255.0 ** 2) >= params.min_eigenvalue
            if finest:
                status[idx[~textured]] = FlowStatus.LOST_LOW_TEXTURE
            keep = textured
            idx, tpl, gx, gy = idx[keep], tpl[keep], gx[keep], gy[keep]
            cx, cy = cx[keep], cy[keep]
            gxx, gxy, gyy, det = gxx[keep], gxy[keep], gyy[keep], det[keep]

            d = flow[idx].copy()
            running = np.ones(len(idx), dtype=bool)
            for _ in range(params.max_iterations):
                if not running.any():
                    break
                qx = cx + d[:, 0]
                qy = cy + d[:, 1]
                if finest:
                    inside = _inside(qx, qy, r, w, h)
                    exited = running & ~inside
                    status[idx[exited]] = FlowStatus.LOST_OUT_OF_BOUNDS
                    running &= inside
                s = np.nonzero(running)[0]
                if len(s) == 0:
                    break
                diff = tpl[s] - sample_j(qx[s], qy[s])
                bx = np.sum(diff * gx[s], axis=1)
                by = np.sum(diff * gy[s], axis=1)
                ddx = (gyy[s] * bx - gxy[s] * by) / det[s]
                ddy = (gxx[s] * by - gxy[s] * bx) / det[s]
                d[s, 0] += ddx
                d[s, 1] += ddy
                running[s[np.hypot(ddx, ddy) < params.epsilon]] = False
            flow[idx] = d

            if finest:
                good = np.array([status[i] is FlowStatus.TRACKED for i in idx], dtype=bool)
                if good.any():
                    g = idx[good]
                    qx = cx[good] + flow[g, 0]
                    qy = cy[good] + flow[g, 1]
                    inside = _inside(qx, qy, r, w, h)
                    status[g[~inside]] = FlowStatus.LOST_OUT_OF_BOUNDS
                    g = g[inside]
                    err = np.mean(np.abs(tpl[good][inside] - sample_j(qx[inside], qy[inside])), axis=1)
                    error[g] = err
                    status[g[err > params.max_error]] = FlowStatus.LOST_HIGH_ERROR
        if not finest:
            flow *= 2.0

    out = []
    for i, kp in enumerate(points):
        out.append(FlowResult(Keypoint(float(pts[i, 0] + flow[i, 0]), float(pts[i, 1] + flow[i, 1]),
                                       kp.score), status[i], float(error[i])))
    return out
