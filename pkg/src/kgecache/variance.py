"""Welford accumulators for per-triplet score variance across epochs."""
from __future__ import annotations

import numpy as np


class VarianceTracker:
    """Running mean and M2 for a fixed list of tracked items, updated once
    per observation round (one score per item per epoch).
    """

    def __init__(self, n_items: int):
        self.count = 0
        self.mean = np.zeros(n_items)
        self.m2 = np.zeros(n_items)

    def update(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.mean.shape:
            raise ValueError("value vector does not match the tracking list")
        self.count += 1
        delta = values - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (values - self.mean)

    def variance(self) -> np.ndarray:
        """Sample variance; undefined (NaN) below two observations."""
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.count - 1)

    def std(self) -> np.ndarray:
        return np.sqrt(self.variance())
