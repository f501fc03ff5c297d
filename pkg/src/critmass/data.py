"""Group records, quality scores from assessment profiles, and dataset I/O."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, TextIO

import numpy as np

from .errors import ParseError, RecordLookupError, ValidationError

FIXTURE = "rae2008_stats_or.csv"

PROFILE_TOL = 1e-9


@dataclass(frozen=True)
class GroupRecord:
    index: int
    name: str
    headcount: float
    quality: float

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(f"record index must be positive, got {self.index}")
        if not (math.isfinite(self.headcount) and self.headcount > 0):
            raise ValidationError(f"{self.name!r}: headcount must be positive, got {self.headcount}")
        if not (0.0 <= self.quality <= 100.0):
            raise ValidationError(f"{self.name!r}: quality must lie in [0, 100], got {self.quality}")


@dataclass(frozen=True)
class QualityProfile:
    """Percentage of output in each star band (4*, 3*, 2*, 1*, unclassified)."""

    p4: float
    p3: float
    p2: float
    p1: float
    pu: float = 0.0

    def __post_init__(self):
        shares = self.shares()
        if any(not (0.0 <= p <= 100.0) for p in shares):
            raise ValidationError(f"profile shares must lie in [0, 100]: {shares}")
        if abs(sum(shares) - 100.0) > PROFILE_TOL:
            raise ValidationError(f"profile shares sum to {sum(shares)!r}, not 100")

    def shares(self):
        return (self.p4, self.p3, self.p2, self.p1, self.pu)


@dataclass(frozen=True)
class WeightScheme:
    w4: float
    w3: float
    w2: float
    w1: float = 0.0
    wu: float = 0.0

    def __post_init__(self):
        w = self.weights()
        if any(x < 0 for x in w):
            raise ValidationError(f"weights must be nonnegative: {w}")
        if not (w[0] > 0 and all(a >= b for a, b in zip(w, w[1:]))):
            raise ValidationError(f"weights must be non-increasing with w4 > 0: {w}")

    def weights(self):
        return (self.w4, self.w3, self.w2, self.w1, self.wu)

    def scaled(self, factor):
        return WeightScheme(*(factor * w for w in self.weights()))


# Funding-council weightings relative to 2* research.
SCHEMES = {
    "2009": WeightScheme(7.0, 3.0, 1.0, 0.0, 0.0),
    "2010": WeightScheme(9.0, 3.0, 1.0, 0.0, 0.0),
}


def quality_from_profile(profile: QualityProfile, scheme: WeightScheme = SCHEMES["2009"]) -> float:
    """Funding-formula score normalised so that an all-4* profile scores 100."""
    total = sum(w * p for w, p in zip(scheme.weights(), profile.shares()))
    return total / scheme.w4


@dataclass(frozen=True)
class Dataset:
    """Ordered records plus a set of excluded indices.

    Exclusion only flags a record: it drops out of fits and statistics but
    stays available for plotting.
    """

    records: tuple[GroupRecord, ...]
    excluded: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        indices = [r.index for r in self.records]
        if len(set(indices)) != len(indices):
            raise ValidationError("record indices must be unique")
        missing = self.excluded - set(indices)
        if missing:
            raise ValidationError(f"excluded indices not present: {sorted(missing)}")

    def __len__(self):
        return len(self.records)

    @property
    def active(self) -> tuple[GroupRecord, ...]:
        return tuple(r for r in self.records if r.index not in self.excluded)

    @property
    def n_active(self) -> int:
        return len(self.records) - len(self.excluded)

    @property
    def active_indices(self) -> tuple[int, ...]:
        return tuple(r.index for r in self.active)

    def arrays(self, active_only=True):
        """(headcount, quality) as float arrays."""
        recs = self.active if active_only else self.records
        N = np.array([r.headcount for r in recs], dtype=float)
        s = np.array([r.quality for r in recs], dtype=float)
        return N, s

    def is_excluded(self, index: int) -> bool:
        return index in self.excluded

    def find(self, selector) -> GroupRecord:
        """Resolve ``selector`` to one record.

        Integers and strings of the form ``"#9"`` select by index. Other
        strings match a name exactly (case-insensitive), falling back to a
        unique substring match.
        """
        if isinstance(selector, str) and selector.startswith("#"):
            try:
                selector = int(selector[1:])
            except ValueError:
                raise RecordLookupError(f"bad index selector {selector!r}") from None
        if isinstance(selector, (int, np.integer)):
            hits = [r for r in self.records if r.index == selector]
        else:
            key = str(selector).strip().casefold()
            hits = [r for r in self.records if r.name.casefold() == key]
            if not hits:
                hits = [r for r in self.records if key and key in r.name.casefold()]
        if not hits:
            raise RecordLookupError(f"no record matches {selector!r}")
        if len(hits) > 1:
            names = ", ".join(r.name for r in hits)
            raise RecordLookupError(f"{selector!r} is ambiguous: {names}")
        return hits[0]

    def summary(self) -> dict:
        N_all, s_all = self.arrays(active_only=False)
        N, s = self.arrays()
        return {
            "n_records": len(self.records),
            "n_active": self.n_active,
            "total_headcount": float(N_all.sum()),
            "mean_headcount": float(N_all.mean()),
            "mean_quality": float(s_all.mean()),
            "active_mean_headcount": float(N.mean()) if len(N) else math.nan,
            "active_mean_quality": float(s.mean()) if len(s) else math.nan,
        }


def exclude(dataset: Dataset, selector) -> Dataset:
    rec = dataset.find(selector)
    if rec.index in dataset.excluded:
        return dataset
    return replace(dataset, excluded=dataset.excluded | {rec.index})


def _parse_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"column {column!r}: not finite: {text!r}")
    return value


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_dataset(source: TextIO | str, scheme: WeightScheme = SCHEMES["2009"]) -> Dataset:
    """Parse delimited text into a Dataset.

    Rows are either ``name,N,s`` or ``name,N,p4,p3,p2,p1,pu``; comma and tab
    delimiters are both accepted and a header row is optional. Profile rows
    are scored with ``scheme``.
    """
    text = source if isinstance(source, str) else source.read()
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise ValidationError("no records")
    delimiter = "\t" if "\t" in lines[0][1] else ","

    records = []
    for k, (lineno, raw) in enumerate(lines):
        row = [c.strip() for c in next(csv.reader([raw], delimiter=delimiter))]
        if k == 0 and len(row) > 1 and not _is_number(row[1]):
            continue  # header
        if len(row) not in (3, 7):
            raise ParseError(lineno, f"expected 3 or 7 columns, got {len(row)}")
        name = row[0]
        if not name:
            raise ParseError(lineno, "empty name")
        N = _parse_float(row[1], lineno, "N")
        if N <= 0:
            raise ValidationError(f"line {lineno}: headcount must be positive, got {N}")
        if len(row) == 3:
            s = _parse_float(row[2], lineno, "s")
        else:
            shares = [_parse_float(c, lineno, band) for c, band in zip(row[2:], ("p4", "p3", "p2", "p1", "pu"))]
            try:
                s = quality_from_profile(QualityProfile(*shares), scheme)
            except ValidationError as exc:
                raise ParseError(lineno, str(exc)) from None
        try:
            records.append(GroupRecord(len(records) + 1, name, N, s))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    if not records:
        raise ValidationError("no records")
    return Dataset(tuple(records))


def read_dataset(path, scheme: WeightScheme = SCHEMES["2009"]) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return load_dataset(fh, scheme)


def load_fixture() -> Dataset:
    """The bundled RAE 2008 Statistics & Operational Research table."""
    text = resources.files(__package__).joinpath("data").joinpath(FIXTURE).read_text(encoding="utf-8")
    return load_dataset(text)


def serialize_dataset(dataset: Dataset) -> str:
    """Inverse of :func:`load_dataset` for name,N,s rows (exclusions are not stored)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "N", "s"])
    for r in dataset.records:
        w.writerow([r.name, repr(r.headcount), repr(r.quality)])
    return buf.getvalue()


def from_arrays(headcounts: Iterable[float], qualities: Iterable[float], prefix="group") -> Dataset:
    recs = [
        GroupRecord(i, f"{prefix}-{i:03d}", float(N), float(s))
        for i, (N, s) in enumerate(zip(headcounts, qualities), start=1)
    ]
    return Dataset(tuple(recs))
