"""Shared fixtures: synthetic bump images and small random particle problems."""

import numpy as np
import pytest

from metamorph import SolverConfig
from metamorph.image_field import ScalarField


def gaussian_bump(size, cx, cy, sigma=3.0, amp=1.0):
    xx, yy = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    return ScalarField(amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2)))


def smooth_random_field(size, seed, freq=0.35):
    """Band-limited random image: smooth everywhere, gentle cell-to-cell jumps."""
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    vals = 0.5 * np.ones((size, size))
    for _ in range(4):
        a, b = rng.uniform(0.1, freq, 2)
        phase = rng.uniform(0, 2 * np.pi, 2)
        vals += rng.uniform(0.05, 0.12) * np.sin(a * xx + phase[0]) * np.cos(b * yy + phase[1])
    return ScalarField(vals)


@pytest.fixture
def default_config():
    return SolverConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
