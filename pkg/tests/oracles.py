"""Independent brute-force oracles the fast implementations are checked against.

Everything here favors obviousness over speed: explicit loops, no shared
code with the package under test beyond its data types.
"""

from __future__ import annotations

import numpy as np


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    w = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def ssim_map_bruteforce(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
                        c1: float = (0.01 * 255.0) ** 2, c2: float = (0.03 * 255.0) ** 2):
    """Double-loop sliding-window SSIM with edge replication (clamped indices)."""
    h, w = a.shape
    window = gaussian_window(size, sigma)
    half = size // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            rows = np.clip(np.arange(i - half, i + half + 1), 0, h - 1)
            cols = np.clip(np.arange(j - half, j + half + 1), 0, w - 1)
            pa = a[np.ix_(rows, cols)]
            pb = b[np.ix_(rows, cols)]
            mu_a = (window * pa).sum()
            mu_b = (window * pb).sum()
            var_a = (window * pa * pa).sum() - mu_a * mu_a
            var_b = (window * pb * pb).sum() - mu_b * mu_b
            cov = (window * pa * pb).sum() - mu_a * mu_b
            out[i, j] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
                        ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return out


def erode_bruteforce(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Minimum filter, out-of-bounds treated as 1."""
    h, w = mask.shape
    half = kernel // 2
    out = np.zeros((h, w), dtype=mask.dtype)
    for i in range(h):
        for j in range(w):
            value = 1
            for di in range(-half, half + 1):
                for dj in range(-half, half + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        value = min(value, int(mask[ii, jj]))
            out[i, j] = value
    return out


def dilate_bruteforce(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Maximum filter, out-of-bounds treated as 0."""
    h, w = mask.shape
    half = kernel // 2
    out = np.zeros((h, w), dtype=mask.dtype)
    for i in range(h):
        for j in range(w):
            value = 0
            for di in range(-half, half + 1):
                for dj in range(-half, half + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        value = max(value, int(mask[ii, jj]))
            out[i, j] = value
    return out


def open_close_bruteforce(mask: np.ndarray, kernel: int) -> np.ndarray:
    opened = dilate_bruteforce(erode_bruteforce(mask, kernel), kernel)
    return erode_bruteforce(dilate_bruteforce(opened, kernel), kernel)


def components_bruteforce(mask: np.ndarray):
    """4-connected components by BFS; returns a list of (size, bbox) with
    bbox = (x, y, w, h)."""
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=bool)
    regions = []
    for i in range(h):
        for j in range(w):
            if mask[i, j] and not seen[i, j]:
                stack = [(i, j)]
                seen[i, j] = True
                pixels = []
                while stack:
                    y, x = stack.pop()
                    pixels.append((y, x))
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            stack.append((yy, xx))
                ys = [p[0] for p in pixels]
                xs = [p[1] for p in pixels]
                bbox = (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1)
                regions.append((len(pixels), bbox))
    return regions


def warp_bruteforce(plane: np.ndarray, matrix: np.ndarray, out_w: int, out_h: int):
    """Naive inverse-mapped bilinear warp; matrix maps source -> destination."""
    full = np.vstack([matrix, [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(full)
    src_h, src_w = plane.shape
    out = np.zeros((out_h, out_w))
    coverage = np.zeros((out_h, out_w), dtype=bool)
    for y in range(out_h):
        for x in range(out_w):
            sx = inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]
            sy = inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]
            if not (0.0 <= sx <= src_w - 1.0 and 0.0 <= sy <= src_h - 1.0):
                continue
            x0 = min(int(np.floor(sx)), src_w - 1)
            y0 = min(int(np.floor(sy)), src_h - 1)
            x1 = min(x0 + 1, src_w - 1)
            y1 = min(y0 + 1, src_h - 1)
            fx = sx - x0
            fy = sy - y0
            top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
            bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
            out[y, x] = top * (1 - fy) + bot * fy
            coverage[y, x] = True
    return out, coverage


def hamming_bruteforce(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit-by-bit Hamming distance table between two descriptor sets."""
    bits_a = np.unpackbits(a, axis=1)
    bits_b = np.unpackbits(b, axis=1)
    out = np.zeros((len(a), len(b)), dtype=int)
    for i in range(len(a)):
        for j in range(len(b)):
            out[i, j] = int((bits_a[i] != bits_b[j]).sum())
    return out


def align_grid_search(p: np.ndarray, g: np.ndarray, zooms: int = 6):
    """Coarse-to-fine grid search for (s, t) minimizing sum((s*p + t - g)^2)."""
    s_lo, s_hi = -10.0, 10.0
    t_lo, t_hi = -10.0, 10.0
    best = (0.0, 0.0, np.inf)
    for _ in range(zooms):
        s_grid = np.linspace(s_lo, s_hi, 81)
        t_grid = np.linspace(t_lo, t_hi, 81)
        for s in s_grid:
            residual = s * p - g
            for t in t_grid:
                cost = ((residual + t) ** 2).sum()
                if cost < best[2]:
                    best = (s, t, cost)
        s_span = (s_hi - s_lo) / 8.0
        t_span = (t_hi - t_lo) / 8.0
        s_lo, s_hi = best[0] - s_span, best[0] + s_span
        t_lo, t_hi = best[1] - t_span, best[1] + t_span
    return best


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Independent central-difference gradient (oracle for the package harness)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (f(xp) - f(xm)) / (2.0 * step)
        it.iternext()
    return grad
