"""Smooth probe instances for gradient verification.

Finite differences are only trustworthy away from the non-smooth points of
each loss (the trim boundary, absolute-value kinks, ReLU kinks).  The
generators here construct random instances with an explicit margin to the
nearest kink, so central differences with the default step are valid at
every probed coordinate.
"""

from __future__ import annotations

import numpy as np

from .losses import (DEFAULT_TRIM, EMBEDDING_DIM, MlpWeights, aesthetic_score, align_lsq,
                     cosine_depth_loss, gradcheck, loss_gm, loss_ssi, ssi_keep_mask)
from .raster import DepthMap, DisparityMap

__all__ = [
    "ssi_instance",
    "gm_instance",
    "cosine_instance",
    "aesthetic_instance",
    "run_gradcheck",
    "GRADCHECK_TOLERANCES",
]

GRADCHECK_TOLERANCES = {"ssi": 1e-4, "gm": 1e-4, "cosine": 1e-5, "aesthetic": 1e-5}

_MAX_DRAWS = 200


def _full(shape) -> np.ndarray:
    return np.ones(shape, dtype=bool)


def ssi_instance(rng: np.random.Generator, h: int = 12, w: int = 12,
                 trim: float = DEFAULT_TRIM):
    """Disparity pair whose trim boundary has a safe squared-residual gap.

    Returns (pred, gt, keep_mask); probing is restricted to kept pixels,
    whose gradient the trimmed loss actually defines.
    """
    for _ in range(_MAX_DRAWS):
        gt = DisparityMap(rng.uniform(0.2, 2.0, (h, w)), _full((h, w)))
        pred_values = np.clip(gt.values + rng.normal(0.0, 0.3, (h, w)), 0.05, None)
        pred = DisparityMap(pred_values, _full((h, w)))
        s, t = align_lsq(pred, gt)
        r2 = np.sort((s * pred_values + t - gt.values).ravel() ** 2)[::-1]
        n_drop = int(np.ceil(trim * r2.size))
        if n_drop == 0 or r2[n_drop - 1] - r2[n_drop] > 5e-3:
            return pred, gt, ssi_keep_mask(pred, gt, trim)
    raise RuntimeError("could not draw a trim-stable instance")


def _checker(h: int, w: int, block: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(h) // block, np.arange(w) // block, indexing="ij")
    return np.where((i + j) % 2 == 0, 1.0, -1.0)


def gm_instance(rng: np.random.Generator, h: int = 16, w: int = 16, scales: int = 4):
    """Disparity pair whose aligned residual has no near-zero forward
    difference at any pooling scale.

    The prediction offsets the ground truth by layered checkerboards whose
    amplitudes dominate scale by scale; 2x average pooling maps each layer
    one scale down, keeping every difference bounded away from zero.
    """
    base = np.array([1.0, 0.4, 0.15, 0.06])[:scales]
    amps = 0.02 * base * rng.uniform(0.9, 1.1, scales) * rng.choice([-1.0, 1.0])
    gt_values = (1.5 + rng.uniform(2.0, 3.0) * (np.arange(h)[:, None] / h)
                 + rng.uniform(1.5, 2.5) * (np.arange(w)[None, :] / w))
    offset = sum(a * _checker(h, w, 2 ** k) for k, a in enumerate(amps))
    pred = DisparityMap(gt_values + offset, _full((h, w)))
    return pred, DisparityMap(gt_values, _full((h, w)))


def cosine_instance(rng: np.random.Generator, h: int = 8, w: int = 8):
    """Depth pair for the (everywhere-smooth) cosine loss."""
    src = DepthMap(rng.uniform(0.5, 5.0, (h, w)), _full((h, w)))
    gen = DepthMap(rng.uniform(0.5, 5.0, (h, w)), _full((h, w)))
    return gen, src


def aesthetic_instance(rng: np.random.Generator, dims: tuple[int, ...] = (EMBEDDING_DIM, 16, 8, 1)):
    """Embedding plus MLP whose hidden pre-activations sit away from ReLU kinks."""
    for _ in range(_MAX_DRAWS):
        weights = MlpWeights(
            dims,
            tuple(rng.normal(0.0, 0.5, (dims[i + 1], dims[i])) for i in range(len(dims) - 1)),
            tuple(rng.normal(0.0, 0.5, dims[i + 1]) for i in range(len(dims) - 1)),
        )
        e = rng.uniform(0.5, 1.5, dims[0])
        h = e / np.sqrt(e @ e)
        margin_ok = True
        a = h
        for i in range(len(dims) - 2):
            z = weights.weights[i] @ a + weights.biases[i]
            if np.abs(z).min() < 1e-3:
                margin_ok = False
                break
            a = np.maximum(z, 0.0)
        if margin_ok:
            return e, weights
    raise RuntimeError("could not draw a kink-free MLP instance")


def _check_ssi(rng: np.random.Generator) -> float:
    pred, gt, keep = ssi_instance(rng)

    def f(x, gt=gt):
        res = loss_ssi(DisparityMap(x, _full(x.shape)), gt)
        return res.value, res.grad

    return gradcheck(f, np.asarray(pred.values), coord_mask=keep)


def _check_gm(rng: np.random.Generator) -> float:
    pred, gt = gm_instance(rng)

    def f(x, gt=gt):
        res = loss_gm(DisparityMap(x, _full(x.shape)), gt)
        return res.value, res.grad

    return gradcheck(f, np.asarray(pred.values))


def _check_cosine(rng: np.random.Generator) -> float:
    gen, src = cosine_instance(rng)

    def f(x, src=src):
        res = cosine_depth_loss(DepthMap(x, _full(x.shape)), src)
        return res.value, res.grad

    return gradcheck(f, np.asarray(gen.values), step=1e-5)


def _check_aesthetic(rng: np.random.Generator) -> float:
    e, weights = aesthetic_instance(rng)

    def f(x, weights=weights):
        return aesthetic_score(x, weights)

    return gradcheck(f, e, step=1e-5)


_CHECKERS = {
    "ssi": _check_ssi,
    "gm": _check_gm,
    "cosine": _check_cosine,
    "aesthetic": _check_aesthetic,
}


def run_gradcheck(op: str, seed: int = 0, instances: int = 20) -> float:
    """Max relative gradient error for an op over seeded random instances."""
    rng = np.random.default_rng(seed)
    return max(_CHECKERS[op](rng) for _ in range(instances))
