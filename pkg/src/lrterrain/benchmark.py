"""Synthetic seabed-like benchmark terrain.

A tilted plane with a handful of Gaussian mounds and pits plus mild noise.
Deterministic for a given seed; used by the performance tests and the
example scripts.
"""
from __future__ import annotations

import numpy as np

__all__ = ["benchmark_terrain", "benchmark_points"]

# (amplitude, x-center, y-center, radius) in domain units of [0, 100]^2
_BUMPS = (
    (4.0, 28.0, 31.0, 6.0),
    (-3.0, 62.0, 44.0, 9.0),
    (2.5, 47.0, 72.0, 4.0),
    (-2.0, 78.0, 21.0, 12.0),
    (3.0, 15.0, 80.0, 5.0),
)


def benchmark_terrain(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Noise-free terrain height at the given coordinates."""
    z = -20.0 + 0.02 * x + 0.035 * y
    for a, cx, cy, r in _BUMPS:
        z = z + a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * r * r))
    return z


def benchmark_points(n: int = 100_000, seed: int = 2024,
                     noise: float | None = None):
    """Scattered samples of the benchmark terrain.

    Returns (points (n,3), tau) where tau is 0.5% of the elevation range
    and the default noise level is tau/5.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 100.0, n)
    y = rng.uniform(0.0, 100.0, n)
    z = benchmark_terrain(x, y)
    zrange = z.max() - z.min()
    tau = 0.005 * zrange
    if noise is None:
        noise = tau / 5.0
    z = z + rng.normal(0.0, noise, n)
    return np.column_stack([x, y, z]), float(tau)
