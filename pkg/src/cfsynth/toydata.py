"""Synthetic datasets used by the demos and the acceptance suite."""

import numpy as np

from .dataio import Column, Schema
from .numcore import Rng

MIXTURE_CENTERS = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


def gaussian_mixture_2d(n: int, rng: Rng, std: float = 0.06) -> np.ndarray:
    """n points from an equal-weight four-mode mixture, clipped to [0,1]^2."""
    modes = rng.generator.integers(0, len(MIXTURE_CENTERS), size=n)
    pts = MIXTURE_CENTERS[modes] + std * rng.generator.standard_normal((n, 2))
    return np.clip(pts, 0.0, 1.0)


def mixture_schema() -> Schema:
    return Schema((Column("x", "continuous", 0.0, 1.0), Column("y", "continuous", 0.0, 1.0)))
