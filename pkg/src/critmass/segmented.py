"""Two-segment linear regression of quality on group size.

The breakpoint search is exhaustive over a fixed candidate set: a uniform
grid between the second-smallest and second-largest distinct headcount, plus
every distinct headcount inside that range and every midpoint between
neighbouring headcounts. The extra candidates make the search exact over all
distinct data partitions, which the grid alone cannot guarantee.

Points lying exactly on a candidate breakpoint belong to both segments when
the segment lines are fitted. For pooled residuals they take the left-branch
prediction.
"""
from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import (
    DegeneratePartitionError,
    InstabilityError,
    StateError,
    ValidationError,
)
from .ols import fit_linear, ols

MODES = ("free", "continuous")
GRID_CELLS = 1000
MIN_DISTINCT = 3  # distinct headcounts required on each side
GOLDEN_TOL = 1e-6
TIE_RTOL = 1e-10
DEFAULT_RESAMPLES = 10_000
MIN_RESAMPLES = 200

_PARAMS = ("a1", "b1", "a2", "b2", "breakpoint")


@dataclass(frozen=True)
class PiecewiseFit:
    a1: float
    b1: float
    a2: float
    b2: float
    breakpoint: float
    r_squared: float
    sse: float
    residuals: np.ndarray
    mode: str
    active_indices: tuple[int, ...]
    n_left: int
    n_right: int
    se_a1: float = math.nan
    se_b1: float = math.nan
    se_a2: float = math.nan
    se_b2: float = math.nan
    se_breakpoint: float = math.nan
    replicates: np.ndarray | None = field(default=None, repr=False)
    n_discarded: int = 0
    seed: int | None = None

    def __post_init__(self):
        if not (self.breakpoint > 0 and math.isfinite(self.breakpoint)):
            raise ValidationError(f"breakpoint must be positive, got {self.breakpoint}")

    def predict(self, N):
        N = np.asarray(N, dtype=float)
        return np.where(N <= self.breakpoint, self.a1 + self.b1 * N, self.a2 + self.b2 * N)

    def parameters(self) -> dict:
        return {k: getattr(self, k) for k in _PARAMS}

    def standard_errors(self) -> dict:
        return {k: getattr(self, "se_" + k) for k in _PARAMS}

    @property
    def has_bootstrap(self) -> bool:
        return self.replicates is not None and len(self.replicates) > 0


@dataclass(frozen=True)
class CriticalMasses:
    lower: float
    upper: float
    se_lower: float = math.nan
    se_upper: float = math.nan

    def __post_init__(self):
        if self.upper != 2.0 * self.lower:
            raise ValidationError("upper critical mass must be twice the lower one")

    def headline(self) -> str:
        return format_uncertain(self.lower, self.se_lower)


@dataclass(frozen=True)
class ConfidenceBand:
    grid: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def format_uncertain(value, error) -> str:
    """Round an error to one significant figure and the value to match."""
    if not math.isfinite(error) or error <= 0:
        return f"{value:.3g}"
    exponent = math.floor(math.log10(error))
    err = round(error, -exponent)
    exponent = math.floor(math.log10(err))  # 0.96 -> 1.0 moves the digit
    digits = max(0, -exponent)
    return f"{round(value, -exponent):.{digits}f} ± {round(err, -exponent):.{digits}f}"


# ---------------------------------------------------------------------------
# breakpoint search on raw arrays


def _candidates(xs_unique):
    lo, hi = xs_unique[1], xs_unique[-2]
    grid = np.linspace(lo, hi, GRID_CELLS + 1)
    mids = 0.5 * (xs_unique[:-1] + xs_unique[1:])
    extra = np.concatenate([xs_unique, mids])
    extra = extra[(extra >= lo) & (extra <= hi)]
    return np.unique(np.concatenate([grid, extra]))


def _prefix(a):
    out = np.empty(a.size + 1)
    out[0] = 0.0
    np.cumsum(a, out=out[1:])
    return out


def _lines_from_sums(n, sx, sy, sxx, sxy):
    xbar = sx / n
    ybar = sy / n
    cxx = sxx - sx * xbar
    cxy = sxy - sx * ybar
    with np.errstate(divide="ignore", invalid="ignore"):
        b = cxy / cxx
    return ybar - b * xbar, b


def _free_profile(xs, ys, cands):
    """Pooled SSE for each candidate; inf where a side is too thin."""
    n = xs.size
    P1 = np.arange(n + 1, dtype=float)
    Px, Py = _prefix(xs), _prefix(ys)
    Pxx, Pxy, Pyy = _prefix(xs * xs), _prefix(xs * ys), _prefix(ys * ys)
    new_value = np.concatenate([[True], xs[1:] != xs[:-1]])
    D = np.concatenate([[0], np.cumsum(new_value)])

    iL = np.searchsorted(xs, cands, side="right")
    iR = np.searchsorted(xs, cands, side="left")
    ok = (D[iL] >= MIN_DISTINCT) & (D[n] - D[iR] >= MIN_DISTINCT)

    def seg(i, j):
        return (P1[j] - P1[i], Px[j] - Px[i], Py[j] - Py[i],
                Pxx[j] - Pxx[i], Pxy[j] - Pxy[i], Pyy[j] - Pyy[i])

    def rss(a, b, s):
        m, sx, sy, sxx, sxy, syy = s
        return syy - 2 * a * sy - 2 * b * sxy + m * a * a + 2 * a * b * sx + b * b * sxx

    zero = np.zeros_like(iL)
    full = np.full_like(iL, n)
    left, right, tie = seg(zero, iL), seg(iR, full), seg(iR, iL)
    with np.errstate(divide="ignore", invalid="ignore"):
        aL, bL = _lines_from_sums(*left[:5])
        aR, bR = _lines_from_sums(*right[:5])
        sse = rss(aL, bL, left) + rss(aR, bR, right) - rss(aR, bR, tie)
    sse = np.where(ok, np.maximum(sse, 0.0), np.inf)
    return sse, iL, iR


def _hinge_sse(xs, ys, P, cands):
    """SSE of the continuous hinge model at each candidate breakpoint.

    ``xs`` must be sorted and ``P`` its prefix sums. The hinge regressor
    h = max(x - c, 0) is added to the straight-line fit by partial
    regression, so each candidate costs O(log n).
    """
    cands = np.atleast_1d(np.asarray(cands, dtype=float))
    Px, Py, Pxx, Pxy = P
    n = xs.size
    sx, sy, sxx, sxy, syy = Px[n], Py[n], Pxx[n], Pxy[n], float(ys @ ys)
    cxx = sxx - sx * sx / n
    cxy = sxy - sx * sy / n
    cyy = syy - sy * sy / n
    base = cyy - cxy * cxy / cxx

    i = np.searchsorted(xs, cands, side="right")
    m = n - i
    tx, ty = sx - Px[i], sy - Py[i]
    txx, txy = sxx - Pxx[i], sxy - Pxy[i]
    sh = tx - m * cands
    shh = txx - 2 * cands * tx + m * cands * cands
    sxh = txx - cands * tx
    shy = txy - cands * ty
    chh = shh - sh * sh / n
    chx = sxh - sx * sh / n
    chy = shy - sh * sy / n
    with np.errstate(divide="ignore", invalid="ignore"):
        perp_hh = chh - chx * chx / cxx
        perp_hy = chy - chx * cxy / cxx
        gain = np.where(perp_hh > 1e-12 * max(cxx, 1.0), perp_hy * perp_hy / perp_hh, 0.0)
    return np.maximum(base - gain, 0.0)


def _hinge_objective(xs, ys, P, xs_unique):
    """Scalar version of :func:`_hinge_sse` for the refinement loop."""
    Px, Py, Pxx, Pxy = (p.tolist() for p in P)
    xl, ul = xs.tolist(), xs_unique.tolist()
    n = len(xl)
    sx, sy, sxx, sxy = Px[n], Py[n], Pxx[n], Pxy[n]
    cxx = sxx - sx * sx / n
    cxy = sxy - sx * sy / n
    base = float(ys @ ys) - sy * sy / n - cxy * cxy / cxx
    floor = 1e-12 * max(cxx, 1.0)
    nu = len(ul)

    def f(c):
        if bisect_right(ul, c) < MIN_DISTINCT or nu - bisect_left(ul, c) < MIN_DISTINCT:
            return math.inf
        i = bisect_right(xl, c)
        m = n - i
        tx, ty = sx - Px[i], sy - Py[i]
        txx, txy = sxx - Pxx[i], sxy - Pxy[i]
        sh = tx - m * c
        chh = txx - 2 * c * tx + m * c * c - sh * sh / n
        chx = txx - c * tx - sx * sh / n
        chy = txy - c * ty - sh * sy / n
        perp_hh = chh - chx * chx / cxx
        if perp_hh <= floor:
            return max(base, 0.0)
        perp_hy = chy - chx * cxy / cxx
        return max(base - perp_hy * perp_hy / perp_hh, 0.0)

    return f


def _hinge_ok(xs_unique, cands):
    cands = np.atleast_1d(cands)
    n_le = np.searchsorted(xs_unique, cands, side="right")
    n_ge = xs_unique.size - np.searchsorted(xs_unique, cands, side="left")
    return (n_le >= MIN_DISTINCT) & (n_ge >= MIN_DISTINCT)


def _golden(f, a, b, tol=GOLDEN_TOL):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _check_inputs(x):
    if x.size < 2 * MIN_DISTINCT:
        raise DegeneratePartitionError(
            f"need at least {2 * MIN_DISTINCT} active points, got {x.size}")
    xu = np.unique(x)
    if xu.size == 1:
        raise ValidationError("all headcounts are identical")
    if xu.size < 2 * MIN_DISTINCT:
        raise DegeneratePartitionError(
            f"need {MIN_DISTINCT} distinct headcounts on each side of the breakpoint")
    return xu


def _line(x, y):
    a, b = _lines_from_sums(x.size, x.sum(), y.sum(), x @ x, x @ y)
    return float(a), float(b)


def _search(x, y, mode):
    """Return (a1, b1, a2, b2, breakpoint) minimising pooled SSE."""
    xu = _check_inputs(x)
    cands = _candidates(xu)
    if mode == "free":
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        sse, iL, iR = _free_profile(xs, ys, cands)
        best = sse.min()
        if not np.isfinite(best):
            raise DegeneratePartitionError("no candidate breakpoint leaves enough points on both sides")
        tol = TIE_RTOL * max(float(np.sum((ys - ys.mean()) ** 2)), 1.0)
        k = int(np.flatnonzero(sse <= best + tol)[0])
        c = float(cands[k])
        a1, b1 = _line(xs[:iL[k]], ys[:iL[k]])
        a2, b2 = _line(xs[iR[k]:], ys[iR[k]:])
        # SSE is flat across the open interval holding c, so locate the
        # breakpoint where the two lines cross whenever that is no worse.
        if iL[k] == iR[k] and abs(b1 - b2) > 1e-9 * (abs(b1) + abs(b2) + 1.0):
            lo, hi = xs[iL[k] - 1], xs[iL[k]]
            cross = (a2 - a1) / (b1 - b2)
            slack = 1e-12 * max(abs(lo), abs(hi), 1.0)
            if lo - slack <= cross <= hi + slack:
                cross = min(max(cross, lo), hi)
                s_cross, jL, jR = _free_profile(xs, ys, np.array([cross]))
                if s_cross[0] <= best + tol:
                    c = float(cross)
                    a1, b1 = _line(xs[:jL[0]], ys[:jL[0]])
                    a2, b2 = _line(xs[jR[0]:], ys[jR[0]:])
        return a1, b1, a2, b2, c

    if mode != "continuous":
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    P = (_prefix(xs), _prefix(ys), _prefix(xs * xs), _prefix(xs * ys))
    ok = _hinge_ok(xu, cands)
    if not ok.any():
        raise DegeneratePartitionError("no candidate breakpoint leaves enough points on both sides")
    sse = np.where(ok, _hinge_sse(xs, ys, P, cands), np.inf)
    best = sse.min()
    tol = TIE_RTOL * max(float(np.sum((y - y.mean()) ** 2)), 1.0)
    k = int(np.flatnonzero(sse <= best + tol)[0])
    c, s_c = float(cands[k]), float(sse[k])
    step = (xu[-2] - xu[1]) / GRID_CELLS
    lo, hi = max(c - step, xu[1]), min(c + step, xu[-2])

    if hi > lo:
        t, s_t = _golden(_hinge_objective(xs, ys, P, xu), lo, hi)
        if s_t < s_c - tol:
            c = t
    c = _polish_hinge(xs, ys, xu, c)
    a1, b1, d = _hinge_coefficients(x, y, c)
    return float(a1), float(b1), float(a1 - d * c), float(b1 + d), c


def _hinge_coefficients(x, y, c):
    X = np.column_stack([np.ones_like(x), x, np.maximum(x - c, 0.0)])
    return np.linalg.lstsq(X, y, rcond=None)[0]


def _hinge_resid_sse(x, y, c):
    a1, b1, d = _hinge_coefficients(x, y, c)
    r = y - (a1 + b1 * x + d * np.maximum(x - c, 0.0))
    return float(r @ r)


def _polish_hinge(xs, ys, xu, c):
    """Snap ``c`` to the exact optimum inside its cell between data values.

    With the partition fixed, the best continuous fit is the pair of free
    lines on either side whenever they cross inside the cell. SSE values
    near the optimum differ by less than float resolution, so the search
    alone only pins c to about sqrt(eps).
    """
    j = int(np.searchsorted(xu, c))
    if j == 0 or j >= xu.size or xu[j] == c:
        return c
    lo, hi = xu[j - 1], xu[j]
    if j < MIN_DISTINCT or xu.size - j < MIN_DISTINCT:
        return c
    k = int(np.searchsorted(xs, c))
    a1, b1 = _line(xs[:k], ys[:k])
    a2, b2 = _line(xs[k:], ys[k:])
    if abs(b1 - b2) <= 1e-12 * (abs(b1) + abs(b2) + 1.0):
        return c
    cross = (a2 - a1) / (b1 - b2)
    if not (lo < cross < hi):
        return c
    if _hinge_resid_sse(xs, ys, cross) <= _hinge_resid_sse(xs, ys, c):
        return float(cross)
    return c


# ---------------------------------------------------------------------------
# public operations


def fit_piecewise(dataset: Dataset, mode: str = "free") -> PiecewiseFit:
    """Least-squares two-segment fit over the dataset's active records."""
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if dataset.n_active < 4:
        raise ValidationError(f"need at least 4 active records, got {dataset.n_active}")
    x, y = dataset.arrays()
    a1, b1, a2, b2, c = _search(x, y, mode)

    left, right = x <= c, x >= c
    if mode == "free":
        fl = fit_linear(x[left], y[left], 1)
        fr = fit_linear(x[right], y[right], 1)
        (a1, b1), (a2, b2) = fl.coefficients, fr.coefficients
    else:
        X = np.column_stack([np.ones_like(x), x, np.maximum(x - c, 0.0)])
        a1, b1, d = ols(X, y).coefficients
        a2, b2 = a1 - d * c, b1 + d
    fitted = np.where(left, a1 + b1 * x, a2 + b2 * x)
    resid = y - fitted
    sse = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    return PiecewiseFit(
        a1=float(a1), b1=float(b1), a2=float(a2), b2=float(b2), breakpoint=float(c),
        r_squared=1.0 - sse / sst if sst > 0 else math.nan,
        sse=sse,
        residuals=resid,
        mode=mode,
        active_indices=dataset.active_indices,
        n_left=int(left.sum()),
        n_right=int(right.sum()),
    )


def _resample_stream(seed, i):
    return np.random.default_rng(np.random.SeedSequence([seed, i]))


def bootstrap_replicates(x, y, mode, resamples, seed):
    """Case-resampling refits. Returns (replicates[k, 5], n_discarded)."""
    n = x.size
    reps = np.full((resamples, 5), np.nan)
    for i in range(resamples):
        idx = _resample_stream(seed, i).integers(0, n, size=n)
        try:
            reps[i] = _search(x[idx], y[idx], mode)
        except (DegeneratePartitionError, ValidationError):
            continue
    good = np.all(np.isfinite(reps), axis=1)
    return reps[good], int((~good).sum())


def bootstrap_errors(dataset: Dataset, fit: PiecewiseFit,
                     resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> PiecewiseFit:
    """Fill standard errors from a seeded case-resampling bootstrap.

    Resample ``i`` draws from its own stream seeded by ``(seed, i)``, so the
    result does not depend on evaluation order.
    """
    if resamples < MIN_RESAMPLES:
        raise ValidationError(f"resamples must be >= {MIN_RESAMPLES}, got {resamples}")
    if tuple(fit.active_indices) != dataset.active_indices:
        raise StateError("fit was computed on a different set of active records")
    x, y = dataset.arrays()
    reps, discarded = bootstrap_replicates(x, y, fit.mode, resamples, int(seed))
    if discarded > resamples / 2:
        raise InstabilityError(
            f"{discarded} of {resamples} resamples had no admissible breakpoint; "
            "more data are needed for a stable error estimate")
    se = reps.std(axis=0, ddof=1)
    return replace(
        fit,
        se_a1=float(se[0]), se_b1=float(se[1]), se_a2=float(se[2]), se_b2=float(se[3]),
        se_breakpoint=float(se[4]),
        replicates=reps,
        n_discarded=discarded,
        seed=int(seed),
    )


def replicate_predictions(replicates, grid):
    grid = np.asarray(grid, dtype=float)[None, :]
    a1, b1, a2, b2, c = (replicates[:, k:k + 1] for k in range(5))
    return np.where(grid <= c, a1 + b1 * grid, a2 + b2 * grid)


def confidence_band(fit: PiecewiseFit, dataset: Dataset, grid, level: float = 0.95) -> ConfidenceBand:
    """Pointwise percentile band of bootstrap replicate predictions.

    The band is widened where necessary so it always contains the point fit.
    """
    if not (0.0 < level < 1.0):
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    if not fit.has_bootstrap:
        raise StateError("confidence band needs bootstrap replicates; run bootstrap_errors first")
    if tuple(fit.active_indices) != dataset.active_indices:
        raise StateError("fit was computed on a different set of active records")
    grid = np.asarray(grid, dtype=float)
    preds = replicate_predictions(fit.replicates, grid)
    lo, hi = np.quantile(preds, [(1 - level) / 2, (1 + level) / 2], axis=0)
    center = fit.predict(grid)
    return ConfidenceBand(grid, center, np.minimum(lo, center), np.maximum(hi, center), level)


def critical_masses(fit: PiecewiseFit) -> CriticalMasses:
    c = fit.breakpoint
    if not (c > 0 and math.isfinite(c)):
        raise ValidationError(f"invalid breakpoint {c}")
    return CriticalMasses(lower=c / 2.0, upper=c, se_lower=fit.se_breakpoint / 2.0,
                          se_upper=fit.se_breakpoint)


def size_class(N: float, masses: CriticalMasses) -> str:
    if N < masses.lower:
        return "small"
    if N < masses.upper:
        return "medium"
    return "large"


def classify(dataset: Dataset, masses: CriticalMasses) -> tuple[dict[int, str], dict[str, int]]:
    """Size class for every record, with counts over the active ones."""
    classes = {r.index: size_class(r.headcount, masses) for r in dataset.records}
    counts = {"small": 0, "medium": 0, "large": 0}
    for r in dataset.active:
        counts[classes[r.index]] += 1
    return classes, counts
