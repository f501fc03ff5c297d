"""Microscopic strength model of a research group and synthetic datasets.

A group of N researchers with mean individual strength ``a`` and mean
pairwise interaction ``b`` has strength Na + N(N-1)b/2. Beyond the cutoff
``n_c`` it splits into ceil(N / n_c) subgroups that interact with mean
strength ``c``. Quality is strength per head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroupRecord
from .errors import ValidationError


@dataclass(frozen=True)
class MicroParams:
    a: float
    b: float
    c: float = 0.0
    n_c: float = 18.0
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.b < 0 or self.c < 0:
            raise ValidationError("interaction strengths b and c must be nonnegative")
        if not self.n_c > 1:
            raise ValidationError(f"fragmentation cutoff must exceed 1, got {self.n_c}")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be nonnegative")


@dataclass(frozen=True)
class SyntheticGroup:
    headcount: float
    subgroups: int
    subgroup_size: float
    strength: float
    quality: float


def subgroup_count(N: float, n_c: float) -> int:
    if N <= n_c:
        return 1
    # guard against N/n_c landing a hair above an integer
    return max(1, math.ceil(N / n_c - 1e-12))


def describe_group(N: float, params: MicroParams) -> SyntheticGroup:
    if not N > 0:
        raise ValidationError(f"headcount must be positive, got {N}")
    a, b, c = params.a, params.b, params.c
    k = subgroup_count(N, params.n_c)
    if k == 1:
        S = N * a + 0.5 * N * (N - 1) * b
        M = float(N)
    else:
        M = N / k
        S = N * a + 0.5 * N * (M - 1) * b + 0.5 * k * (k - 1) * c
    return SyntheticGroup(float(N), k, M, S, S / N)


def expected_strength(N: float, params: MicroParams) -> float:
    return describe_group(N, params).strength


def expected_quality(N: float, params: MicroParams) -> float:
    return describe_group(N, params).quality


def _records(sizes, means, noise_sd, seed, prefix):
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise ValidationError("sizes must be nonempty")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sd, size=sizes.size) if noise_sd > 0 else np.zeros(sizes.size)
    # scores are bounded like the real assessment instrument
    q = np.clip(np.asarray(means, dtype=float) + noise, 0.0, 100.0)
    return Dataset(tuple(GroupRecord(i, f"{prefix}-{i:03d}", float(N), float(s))
                         for i, (N, s) in enumerate(zip(sizes, q), start=1)))


def generate_dataset(sizes, params: MicroParams) -> Dataset:
    """One record per size: expected quality plus seeded Gaussian noise."""
    means = [expected_quality(float(N), params) for N in np.asarray(sizes, dtype=float)]
    return _records(sizes, means, params.noise_sd, params.seed, "synthetic")


def piecewise_mean(N, a1, b1, breakpoint, b2, a2=None):
    """Two-line expected quality; ``a2=None`` makes the lines meet at the breakpoint."""
    N = np.asarray(N, dtype=float)
    if a2 is None:
        a2 = a1 + (b1 - b2) * breakpoint
    return np.where(N <= breakpoint, a1 + b1 * N, a2 + b2 * N)


def generate_planted(sizes, a1, b1, breakpoint, b2, a2=None, noise_sd=0.0, seed=0) -> Dataset:
    """Planted-truth data from known two-line parameters."""
    return _records(sizes, piecewise_mean(sizes, a1, b1, breakpoint, b2, a2), noise_sd, seed, "planted")
