"""Series containers, lagged datasets, splitting, scaling and CSV I/O.

Conventions used throughout the package:

* A :class:`SeriesSet` holds one target series ``x`` of length ``T`` and
  ``K >= 1`` exogenous series ``z`` (shape ``(K, T)``), all aligned on the
  same 0-based time axis.
* A lagged feature vector for time ``t`` is laid out as::

      [x[t-1], ..., x[t-m],
       z[0, t-1], ..., z[0, t-n],
       ...,
       z[K-1, t-1], ..., z[K-1, t-n]]

  i.e. target lags first (most recent first), then each exogenous variable's
  lags in series order.  Every model in the package consumes this layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSeriesError,
    DomainError,
    LengthError,
    ParseError,
    SchemaError,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SeriesSet:
    """Aligned target and exogenous series over a common time axis.

    Immutable after construction; safe to share across threads.
    """

    x: np.ndarray
    z: np.ndarray
    labels: tuple[str, ...]
    time_index: tuple | None = None

    def __post_init__(self):
        x = _frozen(np.atleast_1d(self.x))
        z = _frozen(np.atleast_2d(self.z))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "labels", tuple(self.labels))
        if x.ndim != 1 or z.ndim != 2:
            raise DomainError("x must be 1-D and z must be 2-D (K, T)")
        if len(x) < 2:
            raise LengthError(f"series need at least 2 points, got {len(x)}")
        if z.shape[1] != len(x):
            raise DomainError(
                f"all series must share length T={len(x)}, z has {z.shape[1]}"
            )
        if z.shape[0] < 1:
            raise DomainError("need at least one exogenous series")
        if len(self.labels) != z.shape[0]:
            raise DomainError(
                f"expected {z.shape[0]} labels, got {len(self.labels)}"
            )
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise DomainError("series values must all be finite")
        if self.time_index is not None:
            ti = tuple(self.time_index)
            if len(ti) != len(x):
                raise DomainError("time_index length must equal T")
            object.__setattr__(self, "time_index", ti)

    @property
    def n_points(self) -> int:
        return len(self.x)

    @property
    def n_exog(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class LaggedDataset:
    """One-step prediction rows built from a :class:`SeriesSet`.

    ``features[i]`` follows the module-level lag layout for origin time
    ``origin_times[i]`` and predicts ``targets[i] = x[origin_times[i]]``.
    """

    features: np.ndarray
    targets: np.ndarray
    m: int
    n: int
    n_exog: int
    origin_times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "targets", _frozen(self.targets))
        ot = np.array(self.origin_times, dtype=np.int64)
        ot.setflags(write=False)
        object.__setattr__(self, "origin_times", ot)
        if self.features.shape[1] != self.m + self.n * self.n_exog:
            raise DomainError("feature width must be m + n*K")

    @property
    def n_rows(self) -> int:
        return len(self.targets)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ScalerParams:
    """Per-series mean/std used for z-score standardization."""

    x_mean: float
    x_std: float
    z_mean: np.ndarray
    z_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z_mean", _frozen(self.z_mean))
        object.__setattr__(self, "z_std", _frozen(self.z_std))
        if self.x_std <= 0 or (self.z_std <= 0).any():
            raise DomainError("standard deviations must be strictly positive")

    def inverse(self, s: SeriesSet) -> SeriesSet:
        """Map a standardized SeriesSet back to the original scale."""
        x = s.x * self.x_std + self.x_mean
        z = s.z * self.z_std[:, None] + self.z_mean[:, None]
        return SeriesSet(x=x, z=z, labels=s.labels, time_index=s.time_index)


def make_lagged_dataset(s: SeriesSet, m: int, n: int) -> LaggedDataset:
    """Build one-step rows with target lag order ``m`` and exogenous ``n``.

    Rows exist for every origin time ``t`` in ``[max(m, n), T-1]`` (0-based),
    which gives ``T - max(m, n)`` rows.
    """
    if m < 1 or n < 1:
        raise DomainError(f"lag orders must be >= 1, got m={m}, n={n}")
    lo = max(m, n)
    T = s.n_points
    if lo >= T:
        raise DomainError(f"max(m, n)={lo} must be < T={T}")
    rows = []
    for t in range(lo, T):
        feat = [s.x[t - j] for j in range(1, m + 1)]
        for k in range(s.n_exog):
            feat.extend(s.z[k, t - j] for j in range(1, n + 1))
        rows.append(feat)
    return LaggedDataset(
        features=np.array(rows, dtype=np.float64),
        targets=s.x[lo:T],
        m=m,
        n=n,
        n_exog=s.n_exog,
        origin_times=np.arange(lo, T),
    )


def split_train_test(
    d: LaggedDataset, ratio: float
) -> tuple[LaggedDataset, LaggedDataset]:
    """Chronological split: first ``floor(ratio * rows)`` rows are training."""
    if not 0.0 < ratio < 1.0:
        raise DomainError(f"ratio must be in (0, 1), got {ratio}")
    cut = int(np.floor(ratio * d.n_rows))
    if cut == 0 or cut == d.n_rows:
        raise DomainError(
            f"ratio {ratio} leaves an empty side for {d.n_rows} rows"
        )

    def take(sl: slice) -> LaggedDataset:
        return LaggedDataset(
            features=d.features[sl],
            targets=d.targets[sl],
            m=d.m,
            n=d.n,
            n_exog=d.n_exog,
            origin_times=d.origin_times[sl],
        )

    return take(slice(None, cut)), take(slice(cut, None))


def standardize(s: SeriesSet) -> tuple[SeriesSet, ScalerParams]:
    """Z-score every series; raises if any series has zero variance."""
    def stats(a: np.ndarray, name: str) -> tuple[float, float]:
        mu = float(np.mean(a))
        sd = float(np.std(a))
        if sd == 0.0:
            raise DegenerateSeriesError(f"series '{name}' has zero variance")
        return mu, sd

    x_mean, x_std = stats(s.x, "x")
    z_mean = np.empty(s.n_exog)
    z_std = np.empty(s.n_exog)
    for k in range(s.n_exog):
        z_mean[k], z_std[k] = stats(s.z[k], s.labels[k])
    out = SeriesSet(
        x=(s.x - x_mean) / x_std,
        z=(s.z - z_mean[:, None]) / z_std[:, None],
        labels=s.labels,
        time_index=s.time_index,
    )
    return out, ScalerParams(x_mean, x_std, z_mean, z_std)


# ---------------------------------------------------------------------------
# CSV ingestion / emission.
#
# Format: UTF-8, comma separated, one header row, '.' decimal separator.
# One designated target column; the exogenous columns are either an explicit
# list or every remaining column (in file order) other than the target and an
# optional time column.  Missing values are rejected, never imputed.
# ---------------------------------------------------------------------------


def load_csv(
    path,
    x_column: str = "x",
    z_columns: list[str] | None = None,
    time_column: str | None = None,
) -> SeriesSet:
    """Read a SeriesSet from a CSV file.

    Parse failures name the 1-based data row (header excluded).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LengthError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        raw_rows = [row for row in reader if any(cell.strip() for cell in row)]

    if x_column not in header:
        raise SchemaError(f"{path}: missing target column '{x_column}'")
    if z_columns is None:
        z_columns = [
            c for c in header if c != x_column and c != time_column
        ]
    else:
        for c in z_columns:
            if c not in header:
                raise SchemaError(f"{path}: missing exogenous column '{c}'")
    if time_column is not None and time_column not in header:
        raise SchemaError(f"{path}: missing time column '{time_column}'")
    if not z_columns:
        raise SchemaError(f"{path}: no exogenous columns identified")

    if len(raw_rows) < 2:
        raise LengthError(
            f"{path}: need at least 2 data rows, got {len(raw_rows)}"
        )

    col_idx = {c: header.index(c) for c in header}

    def cell(row, row_no: int, col: str) -> float:
        i = col_idx[col]
        if i >= len(row) or not row[i].strip():
            raise ParseError(f"{path}: row {row_no}, column '{col}': missing value")
        try:
            return float(row[i])
        except ValueError:
            raise ParseError(
                f"{path}: row {row_no}, column '{col}': not numeric: {row[i]!r}"
            ) from None

    x = np.empty(len(raw_rows))
    z = np.empty((len(z_columns), len(raw_rows)))
    times = [] if time_column else None
    for r, row in enumerate(raw_rows):
        row_no = r + 1
        x[r] = cell(row, row_no, x_column)
        for k, c in enumerate(z_columns):
            z[k, r] = cell(row, row_no, c)
        if times is not None:
            times.append(row[col_idx[time_column]].strip())

    return SeriesSet(
        x=x,
        z=z,
        labels=tuple(z_columns),
        time_index=tuple(times) if times is not None else None,
    )


def write_csv(s: SeriesSet, path, x_column: str = "x", time_column: str | None = None) -> None:
    """Write a SeriesSet in the same schema :func:`load_csv` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        head = ([] if time_column is None else [time_column]) + [x_column] + list(s.labels)
        writer.writerow(head)
        for t in range(s.n_points):
            row = []
            if time_column is not None:
                row.append(s.time_index[t] if s.time_index is not None else t)
            row.append(repr(float(s.x[t])))
            row.extend(repr(float(s.z[k, t])) for k in range(s.n_exog))
            writer.writerow(row)
