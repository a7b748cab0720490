"""Core raster types and file I/O.

Single-channel depth/disparity grids carry an explicit validity mask;
invalid pixels are excluded from every downstream statistic.  All types are
immutable value objects and every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = [
    "RasterError",
    "RgbImage",
    "GrayImage",
    "DepthMap",
    "DisparityMap",
    "BinaryMask",
    "read_pfm",
    "write_pfm",
    "load_depth",
    "save_depth",
    "load_disparity",
    "save_mask",
    "load_mask",
    "depth_to_disparity",
    "disparity_to_depth",
    "rgb_to_luma",
    "resize_bilinear",
]

# Rec.601 luma weights; the classic SSIM reference operates on 8-bit luma.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114

_MAX_PIXELS = 10 ** 9  # dimension-overflow guard for parsed headers


class RasterError(ValueError):
    """Malformed raster file or violated image invariant."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, shape (height, width, 3), row-major."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3 or data.dtype != np.uint8:
            raise RasterError(f"RgbImage expects (h, w, 3) uint8, got {data.shape} {data.dtype}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise RasterError("RgbImage dimensions must be >= 1")
        object.__setattr__(self, "data", _as_readonly(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class GrayImage:
    """Floating-point luma image with values in [0, 255], shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise RasterError(f"GrayImage expects a 2-d grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 255.0:
            raise RasterError("GrayImage values must be finite and within [0, 255]")
        object.__setattr__(self, "data", _as_readonly(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def _check_grid_pair(values: np.ndarray, valid: np.ndarray, kind: str):
    if values.ndim != 2:
        raise RasterError(f"{kind} expects a 2-d grid, got shape {values.shape}")
    if valid.shape != values.shape:
        raise RasterError(f"{kind} valid mask shape {valid.shape} != values shape {values.shape}")


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel scene depth (meters unless stated otherwise) with a validity mask.

    Valid pixels are finite and strictly positive; invalid pixels may hold
    anything and never enter a statistic.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        _check_grid_pair(values, valid, "DepthMap")
        v = values[valid]
        if v.size and (not np.all(np.isfinite(v)) or v.min() <= 0.0):
            raise RasterError("DepthMap valid pixels must be finite and > 0")
        object.__setattr__(self, "values", _as_readonly(values))
        object.__setattr__(self, "valid", _as_readonly(valid))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel inverse depth (1/unit) with a validity mask; valid pixels are finite and >= 0."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        _check_grid_pair(values, valid, "DisparityMap")
        v = values[valid]
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0):
            raise RasterError("DisparityMap valid pixels must be finite and >= 0")
        object.__setattr__(self, "values", _as_readonly(values))
        object.__setattr__(self, "valid", _as_readonly(valid))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel {0, 1} mask, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype == bool:
            bits = bits.astype(np.uint8)
        bits = bits.astype(np.uint8, copy=False)
        if bits.ndim != 2:
            raise RasterError(f"BinaryMask expects a 2-d grid, got shape {bits.shape}")
        if bits.size and bits.max() > 1:
            raise RasterError("BinaryMask entries must be 0 or 1")
        object.__setattr__(self, "bits", _as_readonly(bits))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def as_bool(self) -> np.ndarray:
        return self.bits.astype(bool)

    @staticmethod
    def zeros(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.zeros((height, width), np.uint8))

    @staticmethod
    def ones(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.ones((height, width), np.uint8))

    @staticmethod
    def from_bool(a: np.ndarray) -> "BinaryMask":
        return BinaryMask(np.asarray(a, dtype=bool).astype(np.uint8))


# ---------------------------------------------------------------------------
# PFM ("Pf" single-channel): scale-line sign encodes endianness, rows are
# stored bottom-to-top.

def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM file into a float32 (h, w) array, top row first."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header != b"Pf":
            raise RasterError(f"not a single-channel PFM (header {header!r}): {path}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise RasterError(f"malformed PFM dimension line in {path}")
        try:
            width, height = int(dims[0]), int(dims[1])
        except ValueError as e:
            raise RasterError(f"malformed PFM dimensions in {path}") from e
        if width < 1 or height < 1 or width * height > _MAX_PIXELS:
            raise RasterError(f"bad PFM dimensions {width}x{height} in {path}")
        try:
            scale = float(f.readline().strip())
        except ValueError as e:
            raise RasterError(f"malformed PFM scale line in {path}") from e
        if scale == 0.0:
            raise RasterError(f"PFM scale must be nonzero in {path}")
        endianness = "<" if scale < 0 else ">"
        count = width * height
        buf = f.read(count * 4)
        if len(buf) != count * 4:
            raise RasterError(f"truncated PFM payload in {path}")
    data = np.frombuffer(buf, dtype=endianness + "f4").reshape(height, width)
    return np.flipud(data).astype(np.float32)


def write_pfm(path, data: np.ndarray):
    """Write a float32 (h, w) array as little-endian single-channel PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise RasterError("write_pfm expects a 2-d array")
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def load_depth(path, fmt: str = "pfm", scale: float = 1.0) -> DepthMap:
    """Load a depth map from disk.

    fmt "pfm": values taken as-is; non-finite or non-positive entries are
    marked invalid (PFM has no sentinel).  fmt "png16": 16-bit grayscale
    codes map to depth ``code * scale``; code 0 is the invalid sentinel.
    """
    if fmt == "pfm":
        values = read_pfm(path).astype(np.float64)
        valid = np.isfinite(values) & (values > 0.0)
        values = np.where(valid, values, 0.0)
        return DepthMap(values, valid)
    if fmt == "png16":
        if not scale > 0.0:
            raise RasterError(f"png16 scale must be positive, got {scale}")
        with Image.open(path) as img:
            codes = np.asarray(img)
        if codes.ndim != 2 or codes.dtype not in (np.dtype(np.uint16), np.dtype(np.int32)):
            raise RasterError(f"expected 16-bit grayscale PNG at {path}, got {codes.dtype}")
        codes = codes.astype(np.float64)
        valid = codes > 0.0
        return DepthMap(codes * scale, valid)
    raise RasterError(f"unknown depth format {fmt!r}")


def save_depth(d: DepthMap, path):
    """Write a DepthMap as PFM; invalid pixels are stored as NaN."""
    values = np.where(d.valid, d.values, np.nan)
    write_pfm(path, values)


def load_disparity(path) -> DisparityMap:
    """Load an inverse-depth map from PFM; non-finite or negative entries are invalid."""
    values = read_pfm(path).astype(np.float64)
    valid = np.isfinite(values) & (values >= 0.0)
    values = np.where(valid, values, 0.0)
    return DisparityMap(values, valid)


def save_mask(mask: BinaryMask, path):
    """Write a BinaryMask as an 8-bit grayscale PNG (0 -> 0, 1 -> 255)."""
    Image.fromarray(mask.bits * np.uint8(255), mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    """Read a mask PNG written by save_mask; any pixel other than 0/255 is an error."""
    with Image.open(path) as img:
        if img.mode != "L":
            raise RasterError(f"mask PNG must be 8-bit grayscale, got mode {img.mode}: {path}")
        data = np.asarray(img)
    bad = (data != 0) & (data != 255)
    if bad.any():
        raise RasterError(f"mask PNG contains non-{{0,255}} pixel value {int(data[bad][0])}: {path}")
    return BinaryMask((data == 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# Conversions

def depth_to_disparity(d: DepthMap) -> DisparityMap:
    """Map valid depths to 1/depth; invalid pixels stay invalid."""
    values = np.zeros_like(d.values)
    np.divide(1.0, d.values, out=values, where=d.valid)
    return DisparityMap(values, d.valid.copy())


def disparity_to_depth(d: DisparityMap) -> DepthMap:
    """Map valid positive disparities to 1/disparity; zeros become invalid."""
    valid = d.valid & (d.values > 0.0)
    values = np.zeros_like(d.values)
    np.divide(1.0, d.values, out=values, where=valid)
    return DepthMap(values, valid)


def rgb_to_luma(img: RgbImage) -> GrayImage:
    """Rec.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    rgb = img.data.astype(np.float64)
    luma = _LUMA_R * rgb[:, :, 0] + _LUMA_G * rgb[:, :, 1] + _LUMA_B * rgb[:, :, 2]
    return GrayImage(luma)


# ---------------------------------------------------------------------------
# Bilinear resize with half-pixel-centered sampling (identity when the
# target equals the source size; never overshoots the input range).

def _bilinear_grid(n_src: int, n_dst: int):
    coords = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    coords = np.clip(coords, 0.0, n_src - 1.0)
    lo = np.floor(coords).astype(np.intp)
    lo = np.minimum(lo, n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = coords - lo
    return lo, hi, frac


def _resize_plane(plane: np.ndarray, w: int, h: int) -> np.ndarray:
    src_h, src_w = plane.shape
    y0, y1, fy = _bilinear_grid(src_h, h)
    x0, x1, fx = _bilinear_grid(src_w, w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = plane[np.ix_(y0, x0)] * (1.0 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1.0 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(img, w: int, h: int):
    """Resize an RgbImage or GrayImage to (w, h) with bilinear interpolation."""
    if w < 1 or h < 1:
        raise RasterError(f"resize target must be >= 1, got {w}x{h}")
    if isinstance(img, GrayImage):
        return GrayImage(_resize_plane(img.data, w, h))
    if isinstance(img, RgbImage):
        rgb = img.data.astype(np.float64)
        out = np.stack([_resize_plane(rgb[:, :, c], w, h) for c in range(3)], axis=2)
        return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    raise TypeError(f"resize_bilinear expects RgbImage or GrayImage, got {type(img)!r}")
