"""Dataset splitting and per-feature normalization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


def split_counts(n: int, fractions=DEFAULT_FRACTIONS) -> tuple:
    """Sizes of the three contiguous blocks; the test block takes the remainder."""
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = int(round(f[0] * n))
    n_val = int(round(f[1] * n))
    n_test = n - n_train - n_val
    counts = (n_train, n_val, n_test)
    if n_test < 0 or any(c == 0 and fr > 0 for c, fr in zip(counts, f)):
        raise ConfigError(f"{n} points are too few for split {tuple(fractions)}")
    return counts


def split_dataset(points, fractions=DEFAULT_FRACTIONS, seed: int = 0, block: int = 1):
    """Contiguous train/val/test split along the first axis.

    With ``block > 1`` the points are treated as consecutive segments of that
    length and the split happens at segment boundaries, so no segment is
    shared between splits. The segment order is shuffled with ``seed`` before
    splitting; with ``block == 1`` the order is kept and ``seed`` is unused.
    """
    points = np.asarray(points)
    n = points.shape[0]
    if block < 1 or n % block:
        raise ConfigError(f"{n} points do not divide into segments of {block}")
    n_seg = n // block
    counts = split_counts(n_seg, fractions)
    if block > 1:
        order = np.random.default_rng(seed).permutation(n_seg)
        segs = points.reshape(n_seg, block, *points.shape[1:])[order]
    else:
        segs = points
    a, b = counts[0], counts[0] + counts[1]
    parts = (segs[:a], segs[a:b], segs[b:])
    if block > 1:
        parts = tuple(p.reshape(-1, *points.shape[1:]) for p in parts)
    return parts


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def fit_stats(train) -> FeatureStats:
    """Per-feature mean and standard deviation over every leading axis."""
    x = np.asarray(train, dtype=float)
    if x.size == 0:
        raise ConfigError("training split is empty")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    flat_idx = np.flatnonzero(~(std > 1e-12))
    if flat_idx.size:
        warnings.warn(f"zero-variance features {flat_idx.tolist()} left unscaled", RuntimeWarning,
                      stacklevel=2)
        std = std.copy()
        std[flat_idx] = 1.0
    return FeatureStats(mean, std)


def normalize(train, *others):
    """Fit statistics on ``train`` and apply them to every split given.

    Returns ``(stats, normalized_train, *normalized_others)``.
    """
    stats = fit_stats(train)
    return (stats, stats.apply(train), *(stats.apply(o) for o in others))


def denormalize(z, stats: FeatureStats):
    return stats.invert(z)
