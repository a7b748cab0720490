"""Training losses and the reward stack, each with an analytic gradient.

The scale/shift-invariant loss and the multi-scale gradient-matching loss
operate on disparity after a closed-form least-squares alignment; their
gradients include the dependence of the alignment coefficients on the
prediction, so they match finite differences exactly away from the trim
and absolute-value kinks.  The reward side combines a cosine depth
consistency loss with an MLP aesthetic score over a normalized embedding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .raster import DepthMap, DisparityMap, RgbImage, rgb_to_luma

__all__ = [
    "DegenerateAlignmentError",
    "LossResult",
    "MlpWeights",
    "RewardWeights",
    "RlLossResult",
    "align_lsq",
    "loss_ssi",
    "ssi_keep_mask",
    "loss_gm",
    "loss_depth_total",
    "cosine_depth_loss",
    "toy_embed",
    "aesthetic_score",
    "rl_total_loss",
    "gradcheck",
    "load_mlp_weights",
    "save_mlp_weights",
]

EMBEDDING_DIM = 64
SSI_GM_RATIO = 4.0  # weight of the gradient-matching term relative to the SSI term
DEFAULT_TRIM = 0.10


class DegenerateAlignmentError(ValueError):
    """Least-squares alignment is singular (constant or empty prediction)."""


@dataclass(frozen=True)
class LossResult:
    """Scalar loss with its per-pixel gradient grid (zero at invalid/dropped pixels)."""

    value: float
    grad: np.ndarray

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("loss value must be finite")
        grad = np.asarray(self.grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise ValueError("loss gradient must be finite everywhere")
        grad.flags.writeable = False
        object.__setattr__(self, "grad", grad)


@dataclass(frozen=True)
class RewardWeights:
    lambda_depth: float = 0.9
    lambda_aesthetic: float = 0.1

    def __post_init__(self):
        if self.lambda_depth < 0.0 or self.lambda_aesthetic < 0.0:
            raise ValueError("reward weights must be >= 0")


class RlLossResult(NamedTuple):
    value: float
    grad_wrt_dgen: np.ndarray
    grad_wrt_embedding: np.ndarray


# ---------------------------------------------------------------------------
# Closed-form scale/shift alignment

class _Alignment(NamedTuple):
    s: float
    t: float
    a_inv: np.ndarray  # inverse of the 2x2 normal-equation matrix


def _align_values(p: np.ndarray, g: np.ndarray) -> _Alignment:
    n = p.size
    if n < 2:
        raise DegenerateAlignmentError(f"alignment needs >= 2 valid pixels, got {n}")
    sum_p = p.sum()
    sum_g = g.sum()
    mean_p = sum_p / n
    mean_g = sum_g / n
    dp = p - mean_p
    var_p = float(dp @ dp)
    sum_pp = float(p @ p)
    if var_p <= 1e-12 * sum_pp:
        raise DegenerateAlignmentError("prediction is constant over the valid set")
    s = float(dp @ (g - mean_g)) / var_p
    t = mean_g - s * mean_p
    # A = [[sum p^2, sum p], [sum p, n]]; det = n * var_p
    det = n * var_p
    a_inv = np.array([[n, -sum_p], [-sum_p, sum_pp]], dtype=np.float64) / det
    return _Alignment(s, t, a_inv)


def _joint_valid(pred: DisparityMap, gt: DisparityMap,
                 mask: np.ndarray | None = None) -> np.ndarray:
    if pred.values.shape != gt.values.shape:
        raise ValueError(f"map dimensions differ: {pred.values.shape} vs {gt.values.shape}")
    joint = pred.valid & gt.valid
    if mask is not None:
        joint = joint & np.asarray(mask, dtype=bool)
    return joint


def align_lsq(pred: DisparityMap, gt: DisparityMap,
              mask: np.ndarray | None = None) -> tuple[float, float]:
    """Closed-form (s, t) minimizing sum((s*pred + t - gt)^2) over valid pixels."""
    joint = _joint_valid(pred, gt, mask)
    a = _align_values(pred.values[joint], gt.values[joint])
    return a.s, a.t


def _grad_through_alignment(p: np.ndarray, r: np.ndarray, q: np.ndarray,
                            align: _Alignment) -> np.ndarray:
    """Gradient of a functional L w.r.t. the valid prediction values.

    q = dL/dr where r = s*p + t - g; the returned gradient includes the
    chain through (s, t), which themselves depend on every valid pixel.
    """
    c = np.array([q @ p, q.sum()])
    w = align.a_inv @ c
    return align.s * q - w[0] * (align.s * p + r) - w[1] * align.s


# ---------------------------------------------------------------------------
# Scale/shift-invariant trimmed loss

def _ssi_parts(pred: DisparityMap, gt: DisparityMap, trim: float):
    joint = _joint_valid(pred, gt)
    p = pred.values[joint]
    g = gt.values[joint]
    align = _align_values(p, g)
    r = align.s * p + align.t - g
    r2 = r * r
    n = p.size
    n_drop = math.ceil(trim * n)
    # stable sort on descending r^2 resolves ties by ascending pixel index
    order = np.argsort(-r2, kind="stable")
    drop = order[:n_drop]
    keep = order[n_drop:]
    return joint, p, align, r, drop, keep


def loss_ssi(pred: DisparityMap, gt: DisparityMap, trim: float = DEFAULT_TRIM) -> LossResult:
    """Trimmed scale/shift-invariant loss.

    After closed-form alignment over all valid pixels, the ceil(trim*N)
    largest squared residuals are dropped; the value is the mean squared
    residual over the kept pixels.  Dropped and invalid pixels carry zero
    gradient; kept pixels carry the full derivative including the (s, t)
    dependence.
    """
    if not (0.0 <= trim < 1.0):
        raise ValueError(f"trim fraction must lie in [0, 1), got {trim}")
    joint, p, align, r, drop, keep = _ssi_parts(pred, gt, trim)
    if keep.size == 0:
        raise DegenerateAlignmentError("trimming removed every valid pixel")
    value = float(r[keep] @ r[keep]) / keep.size
    q = np.zeros_like(r)
    q[keep] = (2.0 / keep.size) * r[keep]
    grad_valid = _grad_through_alignment(p, r, q, align)
    grad_valid[drop] = 0.0
    grad = np.zeros(pred.values.shape)
    grad[joint] = grad_valid
    return LossResult(value, grad)


def ssi_keep_mask(pred: DisparityMap, gt: DisparityMap, trim: float = DEFAULT_TRIM) -> np.ndarray:
    """Boolean grid of pixels the trimmed loss keeps (true gradient carriers)."""
    joint, _, _, _, _, keep = _ssi_parts(pred, gt, trim)
    flat_idx = np.flatnonzero(joint)[keep]
    mask = np.zeros(pred.values.shape, dtype=bool)
    mask.ravel()[flat_idx] = True
    return mask


# ---------------------------------------------------------------------------
# Multi-scale gradient-matching loss

def _avg_pool(values: np.ndarray, valid: np.ndarray):
    h, w = values.shape
    h2, w2 = h // 2, w // 2
    v = np.where(valid, values, 0.0)[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    m = valid[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    pooled = v.sum(axis=(1, 3)) / 4.0
    pooled_valid = m.all(axis=(1, 3))
    return np.where(pooled_valid, pooled, 0.0), pooled_valid


def _avg_pool_backward(grad_pooled: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = valid.shape
    h2, w2 = grad_pooled.shape
    out = np.zeros((h, w))
    spread = np.repeat(np.repeat(grad_pooled / 4.0, 2, axis=0), 2, axis=1)
    out[:2 * h2, :2 * w2] = spread
    return out * valid


def loss_gm(pred: DisparityMap, gt: DisparityMap, scales: int = 4) -> LossResult:
    """Multi-scale gradient-matching loss on the aligned residual.

    The residual R = (s*pred + t) - gt is average-pooled by 2x per scale;
    each scale contributes the mean of |forward x-difference| plus
    |forward y-difference| over pairs whose endpoints are both valid.  The
    absolute value uses the sign subgradient (0 at exact zeros).
    """
    if scales < 1:
        raise ValueError("scales must be >= 1")
    joint = _joint_valid(pred, gt)
    p = pred.values[joint]
    g = gt.values[joint]
    align = _align_values(p, g)
    r0 = np.where(joint, align.s * pred.values + align.t - gt.values, 0.0)

    levels = [(r0, joint)]
    for _ in range(scales - 1):
        levels.append(_avg_pool(*levels[-1]))

    total = 0.0
    grads = []  # per-level dL/dR_k
    for r, valid in levels:
        dx = r[:, 1:] - r[:, :-1]
        dy = r[1:, :] - r[:-1, :]
        vx = valid[:, 1:] & valid[:, :-1]
        vy = valid[1:, :] & valid[:-1, :]
        n_pairs = int(vx.sum()) + int(vy.sum())
        g_level = np.zeros_like(r)
        if n_pairs > 0:
            total += (np.abs(dx[vx]).sum() + np.abs(dy[vy]).sum()) / n_pairs
            weight = 1.0 / (scales * n_pairs)
            sx = np.where(vx, np.sign(dx), 0.0) * weight
            sy = np.where(vy, np.sign(dy), 0.0) * weight
            g_level[:, 1:] += sx
            g_level[:, :-1] -= sx
            g_level[1:, :] += sy
            g_level[:-1, :] -= sy
        grads.append(g_level)
    value = total / scales

    # pull every level's gradient back to scale 0
    dr0 = grads[-1]
    for k in range(scales - 2, -1, -1):
        dr0 = grads[k] + _avg_pool_backward(dr0, levels[k][1])
    q = dr0[joint]
    grad = np.zeros(pred.values.shape)
    grad[joint] = _grad_through_alignment(p, r0[joint], q, align)
    return LossResult(value, grad)


def loss_depth_total(pred: DisparityMap, gt: DisparityMap,
                     trim: float = DEFAULT_TRIM, scales: int = 4) -> LossResult:
    """Combined disparity loss: 1x SSI + 4x gradient matching."""
    ssi = loss_ssi(pred, gt, trim)
    gm = loss_gm(pred, gt, scales)
    return LossResult(ssi.value + SSI_GM_RATIO * gm.value,
                      ssi.grad + SSI_GM_RATIO * gm.grad)


# ---------------------------------------------------------------------------
# Reward stack

def cosine_depth_loss(d_gen: DepthMap, d_src: DepthMap) -> LossResult:
    """1 - cosine similarity between the jointly valid depth vectors.

    The gradient is taken w.r.t. the generated depth and scattered back to
    pixel positions; it is orthogonal to the prediction by construction.
    """
    if d_gen.values.shape != d_src.values.shape:
        raise ValueError("depth map dimensions differ")
    joint = d_gen.valid & d_src.valid
    if not joint.any():
        raise ValueError("no jointly valid pixels")
    u = d_gen.values[joint]
    v = d_src.values[joint]
    norm_u = math.sqrt(float(u @ u))
    norm_v = math.sqrt(float(v @ v))
    if norm_u == 0.0 or norm_v == 0.0:
        raise ValueError("cosine loss is undefined for a zero vector")
    dot = float(u @ v)
    value = 1.0 - dot / (norm_u * norm_v)
    grad_u = -(v / (norm_u * norm_v) - dot * u / (norm_u ** 3 * norm_v))
    grad = np.zeros(d_gen.values.shape)
    grad[joint] = grad_u
    return LossResult(value, grad)


def toy_embed(img: RgbImage) -> np.ndarray:
    """Deterministic 64-d stand-in for a learned image embedding.

    Layout: 16-bin normalized histogram per R/G/B channel (48), 8-bin
    magnitude-weighted gradient-orientation histogram of luma (8), then
    luma statistics [mean, std, mean|dx|, mean|dy|, min, max, median,
    entropy of the 16-bin luma histogram] (8).
    """
    features = np.zeros(EMBEDDING_DIM)
    n_pixels = img.width * img.height
    for c in range(3):
        hist = np.bincount(img.data[:, :, c].ravel() >> 4, minlength=16)
        features[16 * c:16 * (c + 1)] = hist / n_pixels

    luma = rgb_to_luma(img).data
    gy, gx = np.gradient(luma)
    magnitude = np.hypot(gx, gy)
    orientation = np.arctan2(gy, gx)  # [-pi, pi]
    bins = np.clip(((orientation + np.pi) / (2.0 * np.pi) * 8.0).astype(np.intp), 0, 7)
    orient_hist = np.bincount(bins.ravel(), weights=magnitude.ravel(), minlength=8)
    total_mag = magnitude.sum()
    if total_mag > 0.0:
        features[48:56] = orient_hist / total_mag

    luma_hist = np.bincount(np.clip(luma.astype(np.intp) >> 4, 0, 15), minlength=16)
    probs = luma_hist / n_pixels
    nonzero = probs[probs > 0.0]
    entropy = float(-(nonzero * np.log2(nonzero)).sum())
    features[56:] = [
        luma.mean(),
        luma.std(),
        np.abs(gx).mean(),
        np.abs(gy).mean(),
        luma.min(),
        luma.max(),
        float(np.median(luma)),
        entropy,
    ]
    return features


@dataclass(frozen=True)
class MlpWeights:
    """Fully connected scorer: ReLU hidden layers, linear scalar output."""

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or dims[-1] != 1:
            raise ValueError("dims must list input, hidden..., and a final output of 1")
        if any(d < 1 for d in dims):
            raise ValueError("layer dims must be >= 1")
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i + 1], dims[i]):
                raise ValueError(f"layer {i} weight shape {w.shape} != ({dims[i + 1]}, {dims[i]})")
            if b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} bias shape {b.shape} != ({dims[i + 1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite entries")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)


def load_mlp_weights(path) -> MlpWeights:
    """Parse the MLP weight file: {"dims": [...], "layers": [{"W": [...], "b": [...]}]}.

    W is row-major with d_out * d_in entries; lengths are validated.
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        dims = [int(d) for d in doc["dims"]]
        layers = doc["layers"]
    except (KeyError, TypeError) as e:
        raise ValueError(f"MLP weight file missing dims/layers: {path}") from e
    if len(layers) != len(dims) - 1:
        raise ValueError(f"expected {len(dims) - 1} layers for dims {dims}, got {len(layers)}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        w_flat = np.asarray(layer["W"], dtype=np.float64)
        b = np.asarray(layer["b"], dtype=np.float64)
        d_in, d_out = dims[i], dims[i + 1]
        if w_flat.size != d_out * d_in:
            raise ValueError(f"layer {i}: W has {w_flat.size} entries, expected {d_out * d_in}")
        if b.size != d_out:
            raise ValueError(f"layer {i}: b has {b.size} entries, expected {d_out}")
        weights.append(w_flat.reshape(d_out, d_in))
        biases.append(b)
    return MlpWeights(tuple(dims), tuple(weights), tuple(biases))


def save_mlp_weights(w: MlpWeights, path):
    doc = {
        "dims": list(w.dims),
        "layers": [{"W": wi.ravel().tolist(), "b": bi.tolist()}
                   for wi, bi in zip(w.weights, w.biases)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def aesthetic_score(e: np.ndarray, w: MlpWeights) -> tuple[float, np.ndarray]:
    """Score an embedding after L2 normalization; returns (score, d score/d e).

    The gradient chains through the normalization Jacobian
    (I - h h^T)/||e|| and the active ReLU units, making the score exactly
    invariant to positive rescaling of e.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise ValueError("embedding must be a 1-d vector")
    if e.shape[0] != w.dims[0]:
        raise ValueError(f"embedding dim {e.shape[0]} != MLP input dim {w.dims[0]}")
    norm = math.sqrt(float(e @ e))
    if norm == 0.0:
        raise ValueError("embedding must not be all-zero")
    h = e / norm

    activations = [h]
    pre = None
    for i, (wi, bi) in enumerate(zip(w.weights, w.biases)):
        pre = wi @ activations[-1] + bi
        if i < len(w.weights) - 1:
            activations.append(np.maximum(pre, 0.0))
    score = float(pre[0])

    delta = np.zeros(1)
    delta[0] = 1.0
    for i in range(len(w.weights) - 1, -1, -1):
        delta = w.weights[i].T @ delta
        if i > 0:
            delta = delta * (activations[i] > 0.0)
    grad = (delta - h * float(h @ delta)) / norm
    return score, grad


def rl_total_loss(d_gen: DepthMap, d_src: DepthMap, img: RgbImage,
                  w: MlpWeights, rw: RewardWeights = RewardWeights()) -> RlLossResult:
    """Reward-side objective: lambda_depth * cosine loss - lambda_aesthetic * score."""
    depth = cosine_depth_loss(d_gen, d_src)
    score, score_grad = aesthetic_score(toy_embed(img), w)
    value = rw.lambda_depth * depth.value - rw.lambda_aesthetic * score
    return RlLossResult(
        value=value,
        grad_wrt_dgen=rw.lambda_depth * depth.grad,
        grad_wrt_embedding=-rw.lambda_aesthetic * score_grad,
    )


# ---------------------------------------------------------------------------
# Finite-difference verification harness

def gradcheck(f: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray,
              step: float = 1e-4, coord_mask: np.ndarray | None = None) -> float:
    """Max relative error between an analytic gradient and central differences.

    f maps an array to (value, gradient-like-x).  coord_mask restricts the
    probed coordinates (e.g. to the kept pixels of a trimmed loss); by
    default every coordinate is probed.  The caller must pick probe points
    where f is smooth.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, grad = f(x0)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x0.shape:
        raise ValueError(f"gradient shape {grad.shape} != input shape {x0.shape}")
    if coord_mask is None:
        coords = np.ndindex(x0.shape)
    else:
        coords = zip(*np.nonzero(np.asarray(coord_mask, dtype=bool)))
    max_rel = 0.0
    for idx in coords:
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        numeric = (f(xp)[0] - f(xm)[0]) / (2.0 * step)
        rel = abs(grad[idx] - numeric) / max(abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
