"""Synthetic segmentation data: colored geometric regions with exact labels."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor, _np_dtype

# base RGB per class; class 0 is background
_PALETTE = np.array([
    (0.15, 0.15, 0.20),
    (0.85, 0.20, 0.15),
    (0.15, 0.75, 0.20),
    (0.20, 0.30, 0.90),
    (0.90, 0.80, 0.15),
    (0.75, 0.20, 0.80),
    (0.15, 0.80, 0.80),
    (0.95, 0.55, 0.15),
])


def generate_synthetic_dataset(n: int, size: int, k: int, seed: int,
                               dtype: str = "f64", noise: float = 0.05):
    """``n`` images of ``size`` x ``size`` with one random shape per foreground class.

    Each image gets a jittered background plus, for every class 1..k-1, a
    random rectangle or disc in that class's color. Later shapes may occlude
    earlier ones; labels always reflect the visible class. Deterministic for
    a fixed seed.
    """
    if not 2 <= k <= 8:
        raise ConfigurationError(f"class count must be in 2..8, got {k}")
    if size < 16 or size % 16:
        raise ConfigurationError(f"size must be a positive multiple of 16, got {size}")
    if n < 1:
        raise ConfigurationError(f"need n >= 1 samples, got {n}")
    rng = np.random.default_rng(seed)
    np_dt = _np_dtype(dtype)
    yy, xx = np.mgrid[0:size, 0:size]
    samples = []
    for _ in range(n):
        jitter = rng.normal(0.0, 0.03, size=3)
        image = np.empty((3, size, size), dtype=np.float64)
        image[:] = np.clip(_PALETTE[0] + jitter, 0.05, 0.95)[:, None, None]
        labels = np.zeros((size, size), dtype=np.int64)
        for cls in range(1, k):
            color = np.clip(_PALETTE[cls] + rng.normal(0.0, 0.03, size=3), 0.05, 0.95)
            cy, cx = rng.integers(size // 8, size - size // 8, size=2)
            extent = int(rng.integers(size // 8, size // 3 + 1))
            if rng.random() < 0.5:
                ey = int(rng.integers(size // 8, size // 3 + 1))
                mask = (np.abs(yy - cy) <= ey) & (np.abs(xx - cx) <= extent)
            else:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent ** 2
            labels[mask] = cls
            image[:, mask] = color[:, None]
        image += rng.normal(0.0, noise, size=image.shape)
        np.clip(image, 0.0, 1.0, out=image)
        samples.append((Tensor(image.astype(np_dt)), labels))
    return samples
