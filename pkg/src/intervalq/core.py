"""Shared domain types, CSV ingestion and the seeded randomness contract."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

VARIANTS = ("continuous-floor", "discrete-ceil", "jittered")


class IntervalDataError(ValueError):
    """Malformed interval data (inverted interval, bad cell, missing column)."""


class EstimationError(ValueError):
    """An estimator's precondition failed on the supplied data."""


@dataclass(frozen=True)
class IntervalObs:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(hi):
            raise IntervalDataError("interval endpoint is NaN")
        if lo > hi:
            raise IntervalDataError(f"interval inverted: [{lo}, {hi}]")
        if math.isinf(lo) and lo > 0 or math.isinf(hi) and hi < 0:
            raise IntervalDataError(f"empty interval: [{lo}, {hi}]")


class IntervalDataset:
    """n interval observations [lower_i, upper_i] plus an optional n x p covariate table.

    Stored column-wise as read-only float arrays; the object is immutable after
    construction.
    """

    def __init__(self, lower, upper, covariates=None, has_constant_column: bool = False):
        lower = np.array(lower, dtype=float).reshape(-1)
        upper = np.array(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise IntervalDataError("lower and upper lengths differ")
        if lower.size < 1:
            raise IntervalDataError("dataset is empty")
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise IntervalDataError("interval endpoint is NaN")
        bad = np.flatnonzero(lower > upper)
        if bad.size:
            raise IntervalDataError(f"interval inverted at row {bad[0]}")
        bad = np.flatnonzero((lower == np.inf) | (upper == -np.inf))
        if bad.size:
            raise IntervalDataError(f"empty interval at row {bad[0]}")
        if covariates is not None:
            covariates = np.array(covariates, dtype=float)
            if covariates.ndim == 1:
                covariates = covariates[:, None]
            if covariates.shape[0] != lower.size:
                raise IntervalDataError("covariate row count differs from interval count")
            if not np.isfinite(covariates).all():
                raise IntervalDataError("covariates must be finite")
            covariates.flags.writeable = False
        lower.flags.writeable = False
        upper.flags.writeable = False
        self.lower = lower
        self.upper = upper
        self.covariates = covariates
        self.has_constant_column = bool(has_constant_column)

    @classmethod
    def from_intervals(cls, intervals: Sequence, covariates=None, **kw) -> "IntervalDataset":
        pairs = [(iv.lower, iv.upper) if isinstance(iv, IntervalObs) else tuple(iv) for iv in intervals]
        arr = np.array(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], covariates, **kw)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def p(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def intervals(self) -> list[IntervalObs]:
        return [IntervalObs(a, b) for a, b in zip(self.lower, self.upper)]

    def subset(self, idx) -> "IntervalDataset":
        cov = None if self.covariates is None else self.covariates[idx]
        return IntervalDataset(self.lower[idx], self.upper[idx], cov, self.has_constant_column)

    def shifted(self, shift: float = 0.0, scale: float = 1.0) -> "IntervalDataset":
        """Affine image c + scale*[a, b] (scale > 0)."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return IntervalDataset(shift + scale * self.lower, shift + scale * self.upper,
                               self.covariates, self.has_constant_column)

    def require_finite(self, what: str = "estimator"):
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise EstimationError(f"{what} requires finite interval endpoints")

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"IntervalDataset(n={self.n}, p={self.p})"


@dataclass(frozen=True)
class QuantileSetEstimate:
    tau: float
    lower: float
    upper: float
    variant: str = "continuous-floor"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lower > self.upper:
            raise EstimationError(f"estimate inverted: [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def as_tuple(self) -> tuple[float, float]:
        return (self.lower, self.upper)


@dataclass(frozen=True)
class RngState:
    """(seed, stream) pair; the same pair always reproduces the same draws.

    Streams are derived through numpy's SeedSequence spawn keys, so children
    of a state are statistically independent and platform stable.
    """

    seed: int
    stream: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        stream = self.stream
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        object.__setattr__(self, "stream", tuple(int(s) for s in stream))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngState":
        return RngState(self.seed, self.stream + (int(index),))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    return RngState(int(rng)).generator()


# ---------------------------------------------------------------- CSV I/O

_SENTINELS = {"-inf": -np.inf, "+inf": np.inf, "inf": np.inf}
DEFAULT_SCHEMA = {"lower": "lower", "upper": "upper"}


def _parse_cell(text: str, row: int, column: str, allow_inf: bool) -> float:
    token = text.strip().lower()
    if token in _SENTINELS:
        if not allow_inf:
            raise IntervalDataError(f"infinite sentinel not allowed in column {column!r} at row {row}")
        return _SENTINELS[token]
    try:
        value = float(token)
    except ValueError:
        raise IntervalDataError(f"unparseable cell {text!r} in column {column!r} at row {row}") from None
    if not math.isfinite(value):
        raise IntervalDataError(f"non-finite cell {text!r} in column {column!r} at row {row}")
    return value


def load_csv(path, schema: Optional[Mapping] = None, skip_malformed: bool = False):
    """Read an interval dataset from a headered CSV file.

    ``schema`` maps the roles ``lower``, ``upper`` and optionally
    ``covariates`` (a list of column names) and ``constant`` (name of a
    constant regressor column, which is added to the covariates) to CSV
    column names. Rows are 0-based, counted after the header.

    Returns the dataset; when ``skip_malformed`` is true returns
    ``(dataset, n_skipped)`` instead and drops bad rows rather than raising.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    cov_cols = list(schema.get("covariates") or [])
    const_col = schema.get("constant")
    if const_col:
        cov_cols = [const_col] + [c for c in cov_cols if c != const_col]
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IntervalDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        needed = [schema["lower"], schema["upper"], *cov_cols]
        missing = [c for c in needed if c not in header]
        if missing:
            raise IntervalDataError(f"{path}: missing column(s) {missing}")
        pos = {name: header.index(name) for name in needed}
        lows, highs, covs = [], [], []
        skipped = 0
        for row_idx, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < len(header):
                    raise IntervalDataError(f"short row at row {row_idx}")
                lo = _parse_cell(row[pos[schema["lower"]]], row_idx, schema["lower"], True)
                hi = _parse_cell(row[pos[schema["upper"]]], row_idx, schema["upper"], True)
                if lo > hi:
                    raise IntervalDataError(f"interval inverted at row {row_idx}")
                if lo == np.inf or hi == -np.inf:
                    raise IntervalDataError(f"empty interval at row {row_idx}")
                cv = [_parse_cell(row[pos[c]], row_idx, c, False) for c in cov_cols]
            except IntervalDataError:
                if not skip_malformed:
                    raise
                skipped += 1
                continue
            lows.append(lo)
            highs.append(hi)
            covs.append(cv)
    if not lows:
        raise IntervalDataError(f"{path}: no data rows")
    covariates = np.array(covs, dtype=float) if cov_cols else None
    ds = IntervalDataset(lows, highs, covariates, has_constant_column=bool(const_col))
    return (ds, skipped) if skip_malformed else ds


def format_number(x: float) -> str:
    if x == np.inf:
        return "+inf"
    if x == -np.inf:
        return "-inf"
    return format(float(x), ".17g")


def write_csv(ds: IntervalDataset, path, schema: Optional[Mapping] = None) -> None:
    """Inverse of :func:`load_csv`; floats are written with 17 significant digits."""
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    cov_cols = list(schema.get("covariates") or [])
    const_col = schema.get("constant")
    if const_col:
        cov_cols = [const_col] + [c for c in cov_cols if c != const_col]
    if len(cov_cols) != ds.p:
        if ds.p and not cov_cols:
            cov_cols = [f"x{k}" for k in range(ds.p)]
        else:
            raise ValueError("schema covariate columns do not match dataset")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema["lower"], schema["upper"], *cov_cols])
        for i in range(ds.n):
            cells = [format_number(ds.lower[i]), format_number(ds.upper[i])]
            if ds.p:
                cells += [format_number(v) for v in ds.covariates[i]]
            w.writerow(cells)


def degenerate_check(ds: IntervalDataset) -> bool:
    """True when every observation is a singleton, i.e. the ordinary point-data case."""
    return bool(np.all(ds.lower == ds.upper))
