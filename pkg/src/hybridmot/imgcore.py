"""Grayscale images, luma conversion, image pyramids and bilinear sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import convolve1d

# Levels are not decimated further once a level drops below this size.
MIN_PYRAMID_SIZE = 16

BINOMIAL_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class SamplingOutOfBounds(ValueError):
    """Raised when a subpixel sample falls outside the image."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major float64 intensities in [0, 255], shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0):
            raise ValueError("GrayImage intensities must be finite and within [0, 255]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Interleaved 8-bit RGB, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"ColorImage needs an (H, W, 3) array, got shape {arr.shape}")
        arr = arr.astype(np.uint8, copy=False)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class Pyramid:
    levels: list[GrayImage] = field(default_factory=list)

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a pyramid needs at least one level")

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, level: int) -> GrayImage:
        return self.levels[level]

    @property
    def base(self) -> GrayImage:
        return self.levels[0]


def to_grayscale(img: ColorImage) -> GrayImage:
    """BT.601 luma. Gray pixels (R == G == B) map to their exact value."""
    rgb = img.data.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    luma = 0.299 * r + 0.587 * g + 0.114 * b
    gray = (r == g) & (g == b)
    luma[gray] = r[gray]
    return GrayImage(np.clip(luma, 0.0, 255.0))


def blur_and_decimate(data: np.ndarray) -> np.ndarray:
    """One pyramid step: separable 5-tap binomial blur, then keep even rows/cols."""
    h, w = data.shape
    if h >= 3 and w >= 3:
        # same mirror border as the scipy path, several times faster
        blurred = cv2.sepFilter2D(np.ascontiguousarray(data, dtype=np.float64), cv2.CV_64F,
                                  BINOMIAL_KERNEL, BINOMIAL_KERNEL, borderType=cv2.BORDER_REFLECT_101)
    else:
        blurred = convolve1d(data, BINOMIAL_KERNEL, axis=0, mode="mirror")
        blurred = convolve1d(blurred, BINOMIAL_KERNEL, axis=1, mode="mirror")
    return blurred[: 2 * (h // 2) : 2, : 2 * (w // 2) : 2]


def build_pyramid(img: GrayImage, levels: int) -> Pyramid:
    """Build up to ``levels`` levels, level 0 being ``img`` itself.

    A level is only decimated further while it is at least 16x16, so an image
    smaller than that yields a single-level pyramid.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    out = [img]
    while len(out) < levels:
        cur = out[-1]
        if cur.width < MIN_PYRAMID_SIZE or cur.height < MIN_PYRAMID_SIZE:
            break
        out.append(GrayImage(np.clip(blur_and_decimate(cur.data), 0.0, 255.0)))
    return Pyramid(out)


def sample_bilinear(img: GrayImage, x: float, y: float) -> float:
    if not (0.0 <= x <= img.width - 1 and 0.0 <= y <= img.height - 1):
        raise SamplingOutOfBounds(
            f"sample ({x}, {y}) outside image of size {img.width}x{img.height}")
    return float(bilinear_many(img.data, np.array([x]), np.array([y]))[0])


def bilinear_many(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised bilinear sampling; coordinates must already be in range."""
    h, w = data.shape
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, max(h - 2, 0))
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy
