"""ORB keypoints, descriptor matching, robust affine estimation, and warping.

Detection and description are delegated to OpenCV's ORB with its reference
defaults (FAST-9 threshold 20, 8-level pyramid at scale 1.2, Harris ranking,
intensity-centroid orientation over a radius-15 patch, 256-bit steered
BRIEF).  Matching, RANSAC, and warping are implemented here so the whole
path is deterministic under a caller-provided random generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .raster import BinaryMask, GrayImage, RgbImage, rgb_to_luma

# OpenCV worker threads off: keeps detection bit-reproducible regardless of
# the host's thread count and fork-safe under multiprocessing.
cv2.setNumThreads(0)

__all__ = [
    "Keypoint",
    "Match",
    "AffineTransform",
    "RegistrationConfig",
    "RegistrationResult",
    "DegenerateModelError",
    "detect_orb",
    "match_descriptors",
    "hamming_distance_table",
    "estimate_affine_ransac",
    "warp_affine",
    "register",
]

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1).astype(np.uint16)

MIN_IMAGE_SIDE = 31  # ORB patch diameter


class DegenerateModelError(ValueError):
    """Raised when an affine model cannot be estimated (collinear/insufficient points)."""


@dataclass(frozen=True)
class Keypoint:
    """Sub-pixel corner with pyramid level, orientation (radians), and corner score."""

    x: float
    y: float
    octave: int
    angle: float
    response: float


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    hamming: int


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix mapping source pixel (x, y, 1) to destination coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("affine matrix entries must be finite")
        if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) <= 1e-12:
            raise DegenerateModelError("affine linear part is singular")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @staticmethod
    def translation(dx: float, dy: float) -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (n, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self) -> "AffineTransform":
        a = self.matrix[:, :2]
        t = self.matrix[:, 2]
        a_inv = np.linalg.inv(a)
        return AffineTransform(np.hstack([a_inv, (-a_inv @ t)[:, None]]))


@dataclass(frozen=True)
class RegistrationConfig:
    max_features: int = 1000
    min_matches: int = 10
    min_inliers: int = 10
    ransac_iters: int = 1000
    inlier_px: float = 3.0


@dataclass(frozen=True)
class RegistrationResult:
    transform: AffineTransform | None
    inlier_count: int
    match_count: int
    succeeded: bool

    def __post_init__(self):
        if self.succeeded and (self.transform is None or self.inlier_count < 10 or self.match_count < 10):
            raise ValueError("a successful registration requires a transform and >= 10 matches/inliers")


def _to_u8(img: GrayImage) -> np.ndarray:
    return np.clip(np.rint(img.data), 0, 255).astype(np.uint8)


def detect_orb(img: GrayImage, max_features: int = 1000):
    """Detect ORB keypoints and 256-bit descriptors.

    Returns (keypoints, descriptors) where descriptors is an (n, 32) uint8
    array, row i describing keypoint i.  Keypoints are sorted by descending
    response with (y, x, octave) tie-breaks so the output order is stable.
    """
    if img.width < MIN_IMAGE_SIDE or img.height < MIN_IMAGE_SIDE:
        raise ValueError(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} for ORB")
    orb = cv2.ORB_create(
        nfeatures=max_features,
        scaleFactor=1.2,
        nlevels=8,
        edgeThreshold=31,
        firstLevel=0,
        WTA_K=2,
        scoreType=cv2.ORB_HARRIS_SCORE,
        patchSize=31,
        fastThreshold=20,
    )
    cv_kps, cv_des = orb.detectAndCompute(_to_u8(img), None)
    if not cv_kps:
        return [], np.zeros((0, 32), np.uint8)
    order = sorted(
        range(len(cv_kps)),
        key=lambda i: (-cv_kps[i].response, cv_kps[i].pt[1], cv_kps[i].pt[0], cv_kps[i].octave),
    )
    keypoints = []
    for i in order:
        kp = cv_kps[i]
        keypoints.append(Keypoint(
            x=float(kp.pt[0]),
            y=float(kp.pt[1]),
            octave=int(kp.octave),
            angle=math.radians(kp.angle) % (2.0 * math.pi),
            response=float(kp.response),
        ))
    descriptors = np.ascontiguousarray(cv_des[order]).astype(np.uint8)
    return keypoints, descriptors


def hamming_distance_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between (n, 32) and (m, 32) uint8 descriptor sets."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    return _POPCOUNT[a[:, None, :] ^ b[None, :, :]].sum(axis=2).astype(np.int64)


def match_descriptors(a: np.ndarray, b: np.ndarray) -> list[Match]:
    """Brute-force Hamming nearest neighbors with mutual cross-check.

    Ties resolve to the lowest index, so matching is deterministic; each
    index appears at most once per side.
    """
    if len(a) == 0 or len(b) == 0:
        return []
    table = hamming_distance_table(a, b)
    nearest_in_b = table.argmin(axis=1)
    nearest_in_a = table.argmin(axis=0)
    matches = []
    for i, j in enumerate(nearest_in_b):
        if nearest_in_a[j] == i:
            matches.append(Match(index_a=i, index_b=int(j), hamming=int(table[i, j])))
    return matches


def _solve_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares 2x3 affine from (n >= 3) point pairs; None when degenerate."""
    n = src.shape[0]
    design = np.hstack([src, np.ones((n, 1))])
    sol, _, rank, _ = np.linalg.lstsq(design, dst, rcond=None)
    if rank < 3:
        return None
    return sol.T


def estimate_affine_ransac(points_a: np.ndarray, points_b: np.ndarray,
                           iters: int = 1000, inlier_px: float = 3.0,
                           rng: np.random.Generator | None = None):
    """Robust affine fit from matched point pairs.

    Draws 3-pair minimal hypotheses, scores them by reprojection error
    below inlier_px, and refits the best consensus set by least squares.
    Deterministic for a given generator state.

    Returns (AffineTransform, inlier flags over the input pairs).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    n = pa.shape[0]
    if n != pb.shape[0]:
        raise ValueError("point sets must pair up")
    if n < 3:
        raise DegenerateModelError(f"affine estimation needs >= 3 pairs, got {n}")

    ones = np.ones((n, 1))
    pa_h = np.hstack([pa, ones])
    best_count = -1
    best_inliers = None
    threshold_sq = inlier_px * inlier_px
    for _ in range(iters):
        idx = rng.choice(n, size=3, replace=False)
        tri = pa[idx]
        # collinearity check via the triangle's doubled area
        area2 = abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
                    - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1]))
        if area2 < 1e-9:
            continue
        model = _solve_affine(tri, pb[idx])
        if model is None:
            continue
        err = pa_h @ model.T - pb
        inliers = (err * err).sum(axis=1) < threshold_sq
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers

    if best_inliers is None or best_count < 3:
        raise DegenerateModelError("no non-degenerate affine hypothesis found")
    refit = _solve_affine(pa[best_inliers], pb[best_inliers])
    if refit is None:
        raise DegenerateModelError("consensus set is degenerate")
    return AffineTransform(refit), best_inliers


def warp_affine(img, t: AffineTransform, out_w: int, out_h: int):
    """Warp an image into an (out_w, out_h) frame under t (source -> destination).

    Sampling is inverse-mapped bilinear; destination pixels whose sample
    point falls outside the source get coverage 0 (their value is 0).

    Returns (warped image of the same kind, coverage BinaryMask).
    """
    inv = t.inverse().matrix
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    if isinstance(img, GrayImage):
        planes = [img.data]
    elif isinstance(img, RgbImage):
        planes = [img.data[:, :, c].astype(np.float64) for c in range(3)]
    else:
        raise TypeError(f"warp_affine expects RgbImage or GrayImage, got {type(img)!r}")
    src_h, src_w = planes[0].shape

    inside = (src_x >= 0.0) & (src_x <= src_w - 1.0) & (src_y >= 0.0) & (src_y <= src_h - 1.0)
    cx = np.clip(src_x, 0.0, src_w - 1.0)
    cy = np.clip(src_y, 0.0, src_h - 1.0)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x0 = np.minimum(x0, src_w - 1)
    y0 = np.minimum(y0, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = cx - x0
    fy = cy - y0

    out_planes = []
    for plane in planes:
        top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
        bot = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
        out_planes.append(np.where(inside, top * (1.0 - fy) + bot * fy, 0.0))
    coverage = BinaryMask.from_bool(inside)
    if isinstance(img, GrayImage):
        return GrayImage(out_planes[0]), coverage
    rgb = np.clip(np.rint(np.stack(out_planes, axis=2)), 0, 255).astype(np.uint8)
    return RgbImage(rgb), coverage


def register(gen: RgbImage, orig: RgbImage, cfg: RegistrationConfig = RegistrationConfig(),
             rng: np.random.Generator | None = None):
    """Align a generated image to its original counterpart.

    Detects ORB features on both lumas, matches them, and estimates an
    affine transform by RANSAC.  Success requires at least cfg.min_matches
    matches and cfg.min_inliers consensus inliers; on success the generated
    luma is warped into the original's frame.  Failure is encoded in the
    result (succeeded=False, all-zero coverage), never raised.

    Returns (RegistrationResult, warped generated luma, coverage mask).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    gen_luma = rgb_to_luma(gen)
    orig_luma = rgb_to_luma(orig)
    empty = GrayImage(np.zeros((orig.height, orig.width)))
    no_coverage = BinaryMask.zeros(orig.height, orig.width)

    try:
        kps_gen, des_gen = detect_orb(gen_luma, cfg.max_features)
        kps_orig, des_orig = detect_orb(orig_luma, cfg.max_features)
    except ValueError:
        return RegistrationResult(None, 0, 0, False), empty, no_coverage

    matches = match_descriptors(des_gen, des_orig)
    if len(matches) < cfg.min_matches:
        return RegistrationResult(None, 0, len(matches), False), empty, no_coverage

    pts_gen = np.array([[kps_gen[m.index_a].x, kps_gen[m.index_a].y] for m in matches])
    pts_orig = np.array([[kps_orig[m.index_b].x, kps_orig[m.index_b].y] for m in matches])
    try:
        transform, inliers = estimate_affine_ransac(
            pts_gen, pts_orig, iters=cfg.ransac_iters, inlier_px=cfg.inlier_px, rng=rng)
    except DegenerateModelError:
        return RegistrationResult(None, 0, len(matches), False), empty, no_coverage

    inlier_count = int(inliers.sum())
    if inlier_count < cfg.min_inliers:
        return RegistrationResult(None, inlier_count, len(matches), False), empty, no_coverage

    warped, coverage = warp_affine(gen_luma, transform, orig.width, orig.height)
    return RegistrationResult(transform, inlier_count, len(matches), True), warped, coverage
