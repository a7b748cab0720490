"""Fusion-mask construction and hybrid-supervision assignment.

Two similarity branches produce binary masks over the original image frame:
a feature-registered SSIM branch and a direct (resize-only) SSIM branch.
Their OR is cleaned by morphological open/close, a 3x3 erosion drops
excessively small regions, and a jittered crop is placed over the largest
surviving region.  A sample is accepted when the cleaned mask covers more
than half the pixels and a crop fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import BinaryMask, DepthMap, RgbImage, resize_bilinear, rgb_to_luma
from .registration import RegistrationConfig, RegistrationResult, register
from .ssim import SsimParams, mean_ssim, ssim_map, threshold_map

__all__ = [
    "FusionConfig",
    "Rect",
    "FusionOutcome",
    "SupervisionCounts",
    "fuse_or",
    "morph_open_close",
    "erode",
    "valid_fraction",
    "largest_region_bbox",
    "select_crop",
    "build_fusion_mask",
    "assign_supervision",
]

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class FusionConfig:
    ssim_threshold: float = 0.85
    min_matches: int = 10
    min_valid_fraction: float = 0.5
    crop_size: int = 518
    morph_kernel: int = 5
    erosion_kernel: int = 3

    def __post_init__(self):
        if not (0.0 < self.ssim_threshold <= 1.0):
            raise ValueError(f"ssim_threshold must lie in (0, 1], got {self.ssim_threshold}")
        if not (0.0 < self.min_valid_fraction <= 1.0):
            raise ValueError(f"min_valid_fraction must lie in (0, 1], got {self.min_valid_fraction}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be >= 1")
        if self.morph_kernel % 2 == 0 or self.erosion_kernel % 2 == 0:
            raise ValueError("morphology kernels must be odd-sided")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class FusionOutcome:
    mask: BinaryMask
    valid_fraction: float
    accepted: bool
    crop: Rect | None
    registration: RegistrationResult
    mean_ssim_registered: float | None
    mean_ssim_direct: float | None


@dataclass(frozen=True)
class SupervisionCounts:
    """Per-pixel label assignment inside an accepted crop."""

    crop: Rect
    gt_pixel_count: int
    pseudo_pixel_count: int
    crop_mask: BinaryMask


def fuse_or(m1: BinaryMask, m2: BinaryMask) -> BinaryMask:
    """Pixelwise OR of two masks of identical dimensions."""
    if m1.bits.shape != m2.bits.shape:
        raise ValueError(f"mask dimensions differ: {m1.bits.shape} vs {m2.bits.shape}")
    return BinaryMask(m1.bits | m2.bits)


def morph_open_close(m: BinaryMask, kernel: int = 5) -> BinaryMask:
    """Opening followed by closing with a square structuring element.

    Borders are neutral: out-of-bounds counts as 0 for dilation and 1 for
    erosion, so a solid mask passes through unchanged.
    """
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError("kernel must be odd and >= 1")
    structure = np.ones((kernel, kernel), bool)
    a = m.as_bool()
    opened = ndimage.binary_dilation(
        ndimage.binary_erosion(a, structure, border_value=1), structure, border_value=0)
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(opened, structure, border_value=0), structure, border_value=1)
    return BinaryMask.from_bool(closed)


def erode(m: BinaryMask, kernel: int = 3) -> BinaryMask:
    """Minimum filter with a square element; border treated as 1."""
    structure = np.ones((kernel, kernel), bool)
    return BinaryMask.from_bool(ndimage.binary_erosion(m.as_bool(), structure, border_value=1))


def valid_fraction(m: BinaryMask) -> float:
    """Fraction of pixels set to 1."""
    if m.bits.size == 0:
        raise ValueError("empty mask")
    return float(m.bits.sum() / m.bits.size)


def largest_region_bbox(m: BinaryMask) -> Rect | None:
    """Tight bounding box of the largest 4-connected region.

    Size ties break toward the bbox with the smaller (y, then x) origin.
    Returns None for an all-zero mask.
    """
    labels, count = ndimage.label(m.as_bool(), structure=_FOUR_CONNECTED)
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    largest = sizes.max()
    slices = ndimage.find_objects(labels, max_label=count)
    best = None
    for label_idx in np.flatnonzero(sizes == largest):
        sl_y, sl_x = slices[label_idx]
        rect = Rect(x=int(sl_x.start), y=int(sl_y.start),
                    w=int(sl_x.stop - sl_x.start), h=int(sl_y.stop - sl_y.start))
        if best is None or (rect.y, rect.x) < (best.y, best.x):
            best = rect
    return best


def select_crop(m: BinaryMask, img_w: int, img_h: int, size: int = 518,
                rng: np.random.Generator | None = None) -> Rect | None:
    """Place a size x size crop centered on the largest region's bbox.

    A uniform integer jitter in [-size//4, +size//4] per axis is applied to
    the nominal origin, which is then clamped inside the image.  Returns
    None when the image cannot hold the crop or the mask is empty.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if img_w < size or img_h < size:
        return None
    bbox = largest_region_bbox(m)
    if bbox is None:
        return None
    center_x = bbox.x + bbox.w / 2.0
    center_y = bbox.y + bbox.h / 2.0
    jitter = size // 4
    jx = int(rng.integers(-jitter, jitter + 1))
    jy = int(rng.integers(-jitter, jitter + 1))
    ox = int(round(center_x - size / 2.0)) + jx
    oy = int(round(center_y - size / 2.0)) + jy
    ox = min(max(ox, 0), img_w - size)
    oy = min(max(oy, 0), img_h - size)
    return Rect(x=ox, y=oy, w=size, h=size)


def build_fusion_mask(gen: RgbImage, orig: RgbImage, depth_gt: DepthMap,
                      cfg: FusionConfig = FusionConfig(),
                      rng: np.random.Generator | None = None) -> FusionOutcome:
    """Run both similarity branches and fuse, clean, and gate the result.

    Branch 1 registers gen onto orig and thresholds the SSIM map under the
    warp's coverage; if registration fails the branch contributes an empty
    mask.  Branch 2 thresholds the direct SSIM of the size-adjusted gen.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if (orig.height, orig.width) != (depth_gt.height, depth_gt.width):
        raise ValueError(
            f"original image is {orig.width}x{orig.height} but ground-truth depth "
            f"is {depth_gt.width}x{depth_gt.height}")

    params = SsimParams(threshold=cfg.ssim_threshold)
    reg_cfg = RegistrationConfig(min_matches=cfg.min_matches, min_inliers=cfg.min_matches)
    orig_luma = rgb_to_luma(orig)

    reg_result, warped_gen, coverage = register(gen, orig, reg_cfg, rng)
    mean_registered = None
    if reg_result.succeeded and coverage.bits.any():
        registered_map = ssim_map(warped_gen, orig_luma, params, coverage)
        mask_registered = threshold_map(registered_map, cfg.ssim_threshold)
        if registered_map.coverage.any():
            mean_registered = mean_ssim(registered_map)
    else:
        mask_registered = BinaryMask.zeros(orig.height, orig.width)

    gen_resized = gen if (gen.width, gen.height) == (orig.width, orig.height) \
        else resize_bilinear(gen, orig.width, orig.height)
    direct_map = ssim_map(rgb_to_luma(gen_resized), orig_luma, params)
    mask_direct = threshold_map(direct_map, cfg.ssim_threshold)
    mean_direct = mean_ssim(direct_map)

    fused = fuse_or(mask_registered, mask_direct)
    cleaned = morph_open_close(fused, cfg.morph_kernel)
    final = erode(cleaned, cfg.erosion_kernel)

    fraction = valid_fraction(final)
    crop = select_crop(final, orig.width, orig.height, cfg.crop_size, rng)
    accepted = fraction > cfg.min_valid_fraction and crop is not None
    return FusionOutcome(
        mask=final,
        valid_fraction=fraction,
        accepted=accepted,
        crop=crop,
        registration=reg_result,
        mean_ssim_registered=mean_registered,
        mean_ssim_direct=mean_direct,
    )


def assign_supervision(outcome: FusionOutcome) -> SupervisionCounts:
    """Split the accepted crop into ground-truth and pseudo-label pixels.

    Inside the crop, mask=1 pixels take the source's high-precision depth
    and mask=0 pixels take the teacher pseudo-label.
    """
    if not outcome.accepted or outcome.crop is None:
        raise ValueError("supervision assignment requires an accepted outcome")
    crop = outcome.crop
    window = outcome.mask.bits[crop.y:crop.y + crop.h, crop.x:crop.x + crop.w]
    gt_count = int(window.sum())
    return SupervisionCounts(
        crop=crop,
        gt_pixel_count=gt_count,
        pseudo_pixel_count=int(window.size - gt_count),
        crop_mask=BinaryMask(window.copy()),
    )
