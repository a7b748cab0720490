import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from depthcurate.raster import RgbImage


def make_textured_rgb(seed: int, width: int, height: int) -> RgbImage:
    """Deterministic synthetic image with plenty of corners: random
    rectangles over a smooth gradient."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(0, 120, width)[None, :]
    ys = np.linspace(0, 90, height)[:, None]
    base = (xs + ys)[:, :, None] * np.array([0.5, 0.8, 0.3])
    img = base + 40.0
    for _ in range(40):
        w = int(rng.integers(12, max(13, width // 4)))
        h = int(rng.integers(12, max(13, height // 4)))
        x = int(rng.integers(0, max(1, width - w)))
        y = int(rng.integers(0, max(1, height - h)))
        color = rng.uniform(0, 255, 3)
        img[y:y + h, x:x + w] = color
    return RgbImage(np.clip(img, 0, 255).astype(np.uint8))


@pytest.fixture
def textured_image() -> RgbImage:
    return make_textured_rgb(seed=11, width=160, height=160)
