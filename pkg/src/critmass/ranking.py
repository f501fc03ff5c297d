"""Deviations of quality from the overall mean and from the fitted model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import StateError, ValidationError
from .segmented import PiecewiseFit


@dataclass(frozen=True)
class ResidualReport:
    mode: str  # "vs_mean" or "vs_model"
    deviations: tuple[tuple[int, float], ...]  # (index, deviation) in record order
    names: dict
    range: float
    std_dev: float
    excluded_indices: frozenset = frozenset()

    def values(self) -> np.ndarray:
        return np.array([d for _, d in self.deviations])


def _report(mode, dataset, pairs, excluded):
    vals = np.array([d for _, d in pairs])
    if vals.size == 0:
        raise ValidationError("no records to report")
    return ResidualReport(
        mode=mode,
        deviations=tuple(pairs),
        names={r.index: r.name for r in dataset.records},
        range=float(vals.max() - vals.min()),
        std_dev=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        excluded_indices=frozenset(excluded),
    )


def residuals_vs_mean(dataset: Dataset, include_excluded: bool = False) -> ResidualReport:
    """Quality minus the mean quality of the same set of records."""
    recs = dataset.records if include_excluded else dataset.active
    if not recs:
        raise ValidationError("dataset has no records to report")
    mean = float(np.mean([r.quality for r in recs]))
    pairs = [(r.index, r.quality - mean) for r in recs]
    excluded = () if include_excluded else dataset.excluded
    return _report("vs_mean", dataset, pairs, excluded)


def residuals_vs_model(dataset: Dataset, fit: PiecewiseFit) -> ResidualReport:
    """Quality minus the two-segment expectation at each group's size."""
    if tuple(fit.active_indices) != dataset.active_indices:
        raise StateError("fit was computed on a different set of active records")
    pairs = [(r.index, r.quality - float(fit.predict(r.headcount))) for r in dataset.active]
    return _report("vs_model", dataset, pairs, dataset.excluded)


def rank_groups(report: ResidualReport) -> list[tuple[str, float, int]]:
    """(name, deviation, rank) from most to least over-performing; ties by name."""
    rows = sorted(((report.names[i], d) for i, d in report.deviations), key=lambda t: (-t[1], t[0]))
    return [(name, dev, k) for k, (name, dev) in enumerate(rows, start=1)]
