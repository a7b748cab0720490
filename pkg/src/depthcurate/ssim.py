"""Windowed structural-similarity maps and thresholding.

Local moments use an 11x11 Gaussian window (sigma 1.5) with the canonical
stabilizers c1 = (0.01*255)^2 and c2 = (0.03*255)^2; borders are handled by
edge replication so the map keeps the input's size.  A coverage mask
propagates conservatively: a pixel is covered only if its whole window is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import BinaryMask, GrayImage

__all__ = ["SsimParams", "SsimMap", "ssim_map", "threshold_map", "mean_ssim"]


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-d Gaussian kernel (weights sum to 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    one_d = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    window = np.outer(one_d, one_d)
    return window / window.sum()


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    c1: float = (0.01 * 255.0) ** 2
    c2: float = (0.03 * 255.0) ** 2
    threshold: float = 0.85

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 1, got {self.window_size}")
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ValueError("c1 and c2 must be positive")

    def window(self) -> np.ndarray:
        return gaussian_window(self.window_size, self.sigma)


@dataclass(frozen=True)
class SsimMap:
    """Per-pixel SSIM values in [-1, 1] plus a coverage mask."""

    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        coverage = np.asarray(self.coverage, dtype=bool)
        if values.shape != coverage.shape or values.ndim != 2:
            raise ValueError("SsimMap values/coverage must be matching 2-d grids")
        if not np.all(np.isfinite(values)) or np.abs(values).max(initial=0.0) > 1.0 + 1e-9:
            raise ValueError("SSIM values must be finite and within [-1, 1]")
        values.flags.writeable = False
        coverage.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "coverage", coverage)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def _local_mean(img: np.ndarray, weights_1d: np.ndarray) -> np.ndarray:
    # separable Gaussian == full 2-d window under replicate padding
    out = ndimage.correlate1d(img, weights_1d, axis=0, mode="nearest")
    return ndimage.correlate1d(out, weights_1d, axis=1, mode="nearest")


def ssim_map(a: GrayImage, b: GrayImage, params: SsimParams = SsimParams(),
             coverage: BinaryMask | None = None) -> SsimMap:
    """Per-pixel SSIM between two luma images of identical size.

    Pixels whose window overlaps any non-covered input pixel are marked
    non-covered in the output and carry value 0.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"image dimensions differ: {a.data.shape} vs {b.data.shape}")
    if coverage is not None and coverage.bits.shape != a.data.shape:
        raise ValueError("coverage dimensions do not match the images")

    half = (params.window_size - 1) / 2.0
    coords = np.arange(params.window_size, dtype=np.float64) - half
    one_d = np.exp(-(coords ** 2) / (2.0 * params.sigma * params.sigma))
    one_d = one_d / one_d.sum()

    x = a.data
    y = b.data
    mu_x = _local_mean(x, one_d)
    mu_y = _local_mean(y, one_d)
    sigma_x = _local_mean(x * x, one_d) - mu_x * mu_x
    sigma_y = _local_mean(y * y, one_d) - mu_y * mu_y
    sigma_xy = _local_mean(x * y, one_d) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + params.c1) * (2.0 * sigma_xy + params.c2)
    den = (mu_x * mu_x + mu_y * mu_y + params.c1) * (sigma_x + sigma_y + params.c2)
    values = num / den
    np.clip(values, -1.0, 1.0, out=values)

    if coverage is None:
        covered = np.ones(x.shape, dtype=bool)
    else:
        covered = ndimage.minimum_filter(
            coverage.as_bool(), size=params.window_size, mode="nearest")
        values = np.where(covered, values, 0.0)
    return SsimMap(values, covered)


def threshold_map(m: SsimMap, threshold: float) -> BinaryMask:
    """Mask of pixels that are covered and strictly exceed the threshold."""
    return BinaryMask.from_bool(m.coverage & (m.values > threshold))


def mean_ssim(m: SsimMap) -> float:
    """Arithmetic mean of SSIM over covered pixels."""
    if not m.coverage.any():
        raise ValueError("SSIM map has no covered pixels")
    return float(m.values[m.coverage].mean())
