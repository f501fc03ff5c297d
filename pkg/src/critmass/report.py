"""End-to-end analysis, JSON reports and plot-data tables."""
from __future__ import annotations

import csv
import io
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data import SCHEMES, Dataset, exclude, load_fixture, read_dataset
from .errors import CritMassError, ValidationError
from .nls import ComparisonRow, compare_ansaetze
from .ols import hat_values
from .ranking import ResidualReport, rank_groups, residuals_vs_mean, residuals_vs_model
from .segmented import (
    MIN_RESAMPLES,
    MODES,
    ConfidenceBand,
    CriticalMasses,
    PiecewiseFit,
    bootstrap_errors,
    classify,
    confidence_band,
    critical_masses,
    fit_piecewise,
)
from .stat_tests import (
    TestResult,
    ks_normality,
    test_equal_slopes,
    test_no_correlation,
    test_zero_right_slope,
)

SIG_DIGITS = 10
FIT_GRID_POINTS = 200
LEVERAGE_FACTOR = 3.0
FIGURES = ("data", "fit", "rank-mean", "rank-model")
TESTS = {
    "nocorr": "no_correlation",
    "slopes": "equal_slopes",
    "rightflat": "zero_right_slope",
    "ks": "ks_normality",
}


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None  # None selects the bundled fixture
    weights: str = "2009"
    exclusions: tuple = ()
    mode: str = "continuous"
    resamples: int = 10_000
    seed: int | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.weights not in SCHEMES:
            raise ValidationError(f"unknown weight scheme {self.weights!r}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown fit mode {self.mode!r}")
        # 0 means "no bootstrap", for stages that only need the point fit
        if self.resamples != 0 and self.resamples < MIN_RESAMPLES:
            raise ValidationError(f"resamples must be 0 or >= {MIN_RESAMPLES}")
        if not (0.0 < self.level < 1.0):
            raise ValidationError("confidence level must lie in (0, 1)")
        if self.resamples > 0 and self.seed is None:
            raise ValidationError("an explicit seed is required for bootstrap resampling")

    def to_dict(self) -> dict:
        return {
            "input": self.input or "<bundled RAE 2008 Statistics & OR table>",
            "weights": self.weights,
            "exclusions": list(self.exclusions),
            "mode": self.mode,
            "resamples": self.resamples,
            "seed": self.seed,
            "level": self.level,
            "version": __version__,
        }


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if self.stage == "load" or isinstance(self.cause, OSError):
            return 2
        return 1

    def to_dict(self) -> dict:
        return {"error": {"stage": self.stage, "type": type(self.cause).__name__,
                          "message": str(self.cause)}}


@contextmanager
def stage(name):
    try:
        yield
    except (CritMassError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class AnalysisReport:
    config: RunConfig
    dataset: Dataset
    fit: PiecewiseFit
    masses: CriticalMasses
    classes: dict
    class_counts: dict
    tests: dict = field(default_factory=dict)
    comparison: list = field(default_factory=list)
    vs_mean_all: ResidualReport | None = None
    vs_mean_active: ResidualReport | None = None
    vs_model: ResidualReport | None = None
    band: ConfidenceBand | None = None
    leverage_flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return clean({
            "config": self.config.to_dict(),
            "dataset": {**self.dataset.summary(),
                        "excluded": _excluded(self.dataset)},
            "headline": {
                "lower_critical_mass": self.masses.headline(),
                "upper_critical_mass": f"{self.masses.upper:.3g}",
            },
            "fit": fit_block(self.fit, self.masses, self.class_counts, self.dataset),
            "tests": {k: t.to_dict() for k, t in self.tests.items()},
            "comparison": [r.to_dict() for r in self.comparison],
            "residuals": {
                "vs_mean_all": residual_block(self.vs_mean_all),
                "vs_mean_active": residual_block(self.vs_mean_active),
                "vs_model": residual_block(self.vs_model),
            },
            "leverage_flags": self.leverage_flags,
        })


def _num(x):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def clean(obj):
    """Recursively make ``obj`` JSON-safe with floats cut to 10 significant digits."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, ensure_ascii=False) + "\n"


def _excluded(dataset):
    return [{"index": i, "name": dataset.find(i).name} for i in sorted(dataset.excluded)]


def fit_block(fit, masses, counts, dataset) -> dict:
    return {
        "mode": fit.mode,
        "parameters": fit.parameters(),
        "standard_errors": fit.standard_errors(),
        "breakpoint": fit.breakpoint,
        "r_squared": fit.r_squared,
        "n_left": fit.n_left,
        "n_right": fit.n_right,
        "bootstrap": {"resamples_used": 0 if fit.replicates is None else len(fit.replicates),
                      "discarded": fit.n_discarded, "seed": fit.seed},
        "critical_masses": {"lower": masses.lower, "upper": masses.upper,
                            "se_lower": masses.se_lower, "se_upper": masses.se_upper,
                            "headline": masses.headline()},
        "classification_counts": counts,
        "excluded": _excluded(dataset),
    }


def residual_block(rep: ResidualReport | None):
    if rep is None:
        return None
    return {
        "mode": rep.mode,
        "range": rep.range,
        "std_dev": rep.std_dev,
        "excluded_indices": sorted(rep.excluded_indices),
        "ranking": [{"rank": k, "name": n, "deviation": d} for n, d, k in rank_groups(rep)],
    }


def load_input(config: RunConfig) -> Dataset:
    with stage("load"):
        ds = load_fixture() if config.input is None else read_dataset(config.input, SCHEMES[config.weights])
    with stage("exclude"):
        for sel in config.exclusions:
            ds = exclude(ds, sel)
    return ds


def leverage(dataset: Dataset, fit: PiecewiseFit) -> np.ndarray:
    """Hat values of the fitted two-segment model, in active-record order."""
    N, _ = dataset.arrays()
    c = fit.breakpoint
    if fit.mode == "continuous":
        return hat_values(np.column_stack([np.ones_like(N), N, np.maximum(N - c, 0.0)]))
    h = np.empty_like(N)
    left, right = N <= c, N > c
    ones = np.ones_like(N)
    h[left] = hat_values(np.column_stack([ones[left], N[left]]))
    h[right] = hat_values(np.column_stack([ones[right], N[right]]))
    return h


def leverage_flags(dataset: Dataset, fit: PiecewiseFit, factor=LEVERAGE_FACTOR) -> list:
    h = leverage(dataset, fit)
    mean = float(h.mean())
    biggest = max(dataset.active, key=lambda r: r.headcount).index
    flags = []
    for rec, hv in zip(dataset.active, h):
        if hv > factor * mean:
            flags.append({
                "index": rec.index,
                "name": rec.name,
                "headcount": rec.headcount,
                "leverage": float(hv),
                "ratio_to_mean": float(hv / mean),
                "largest_group": rec.index == biggest,
                "note": "high-leverage record; candidate outlier (e.g. a joint submission)",
            })
    return flags


def run_fit(config: RunConfig, dataset: Dataset) -> PiecewiseFit:
    with stage("fit"):
        fit = fit_piecewise(dataset, config.mode)
    if config.resamples:
        with stage("bootstrap"):
            fit = bootstrap_errors(dataset, fit, config.resamples, config.seed)
    return fit


def run_tests(dataset: Dataset, fit: PiecewiseFit, which="all") -> dict:
    runners = {
        "nocorr": lambda: test_no_correlation(dataset),
        "slopes": lambda: test_equal_slopes(dataset, fit),
        "rightflat": lambda: test_zero_right_slope(dataset, fit),
        "ks": lambda: ks_normality(fit.residuals),
    }
    keys = list(runners) if which == "all" else [which]
    out = {}
    with stage("test"):
        for k in keys:
            if k not in runners:
                raise ValidationError(f"unknown test {k!r}")
            out[TESTS[k]] = runners[k]()
    return out


def fit_grid(dataset: Dataset, points=FIT_GRID_POINTS) -> np.ndarray:
    N, _ = dataset.arrays()
    return np.linspace(N.min(), N.max(), points)


def run_full_analysis(config: RunConfig) -> AnalysisReport:
    if not config.resamples:
        raise StageError("config", ValidationError("the full analysis needs bootstrap resamples"))
    ds = load_input(config)
    fit = run_fit(config, ds)
    with stage("critical_masses"):
        masses = critical_masses(fit)
        classes, counts = classify(ds, masses)
    tests = run_tests(ds, fit)
    with stage("compare"):
        comparison = compare_ansaetze(ds, config.mode, piecewise=fit)
    with stage("rank"):
        vs_mean_all = residuals_vs_mean(ds, include_excluded=True)
        vs_mean_active = residuals_vs_mean(ds)
        vs_model = residuals_vs_model(ds, fit)
    with stage("band"):
        band = confidence_band(fit, ds, fit_grid(ds), config.level)
    with stage("leverage"):
        flags = leverage_flags(ds, fit)
    return AnalysisReport(config, ds, fit, masses, classes, counts, tests, comparison,
                          vs_mean_all, vs_mean_active, vs_model, band, flags)


# ---------------------------------------------------------------------------
# plot data


def plot_rows(report: AnalysisReport, which: str):
    """(header, rows) for one figure's data table."""
    ds = report.dataset
    if which == "data":
        header = ["index", "name", "N", "s", "excluded_flag"]
        rows = [[r.index, r.name, r.headcount, r.quality, int(ds.is_excluded(r.index))]
                for r in ds.records]
    elif which == "fit":
        if report.band is None:
            raise ValidationError("report has no confidence band")
        b = report.band
        header = ["N_grid", "prediction", "band_lo", "band_hi"]
        rows = [list(t) for t in zip(b.grid, b.center, b.lower, b.upper)]
    elif which in ("rank-mean", "rank-model"):
        rep = report.vs_mean_all if which == "rank-mean" else report.vs_model
        if rep is None:
            raise ValidationError(f"report has no data for {which!r}")
        header = ["index", "name", "deviation", "excluded_flag"]
        rows = [[i, rep.names[i], d, int(ds.is_excluded(i))] for i, d in rep.deviations]
    else:
        raise ValidationError(f"unknown figure id {which!r}; expected one of {FIGURES}")
    return header, rows


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(_num(v))
    return v


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_plot_data(report: AnalysisReport, which: str) -> str:
    return to_csv(*plot_rows(report, which))


def comparison_csv(rows: list[ComparisonRow]) -> str:
    out = []
    for r in rows:
        if r.error is not None:
            out.append([r.model, "", "", "", r.r_squared, r.converged, r.error])
            continue
        for name, value in r.parameters.items():
            out.append([r.model, name, value, r.standard_errors.get(name, math.nan),
                        r.r_squared, r.converged, ""])
    return to_csv(["model", "parameter", "value", "standard_error", "r_squared", "converged", "error"], out)


def tests_dict(tests: dict[str, TestResult]) -> dict:
    return {k: t.to_dict() for k, t in tests.items()}
