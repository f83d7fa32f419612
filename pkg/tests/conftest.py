"""Shared fixtures: seeded RNGs and natural grayscale crops.

Natural crops are sampled from the scikit-image sample photographs with a
minimum-texture floor (near-flat sky patches are degenerate inversion
targets) and are mean-shifted by 128 like every image entering the
pipeline.
"""

from __future__ import annotations

import numpy as np
import pytest
from skimage import data

_SOURCES = None


def _sources():
    global _SOURCES
    if _SOURCES is None:
        gray = [data.camera(), data.moon(), data.coins(), data.text(), data.page()]
        color = [data.astronaut(), data.coffee(), data.chelsea()]
        _SOURCES = [np.asarray(s, dtype=np.float64) for s in gray] + [
            np.asarray(s, dtype=np.float64).mean(axis=2) for s in color
        ]
    return _SOURCES


def natural_crops(n, size=64, min_std=15.0, seed=7):
    """n mean-subtracted grayscale crops of shape (size, size, 1)."""
    rng = np.random.default_rng(seed)
    srcs = _sources()
    crops = []
    while len(crops) < n:
        src = srcs[int(rng.integers(len(srcs)))]
        if src.shape[0] <= size or src.shape[1] <= size:
            continue
        y = int(rng.integers(0, src.shape[0] - size))
        x = int(rng.integers(0, src.shape[1] - size))
        crop = src[y:y + size, x:x + size]
        if crop.std() < min_std:
            continue
        crops.append(np.ascontiguousarray((crop - 128.0)[:, :, None]))
    return crops


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def crops64():
    return natural_crops(8, size=64)


@pytest.fixture(scope="session")
def crops32():
    return natural_crops(4, size=32)
