"""Gridded monthly temperature fields and the arithmetic on them.

Conventions used throughout the package:

- A *field* is a 2-D ``(n_lat, n_lon)`` numpy array of temperature in
  degrees Celsius (or dimensionless values after normalization).
- Rows run **south to north**: row ``i`` sits at latitude
  ``-90 + 180 * i / n_lat`` degrees.  Image emitters flip to north-up.
- Time is a sequence of consecutive calendar months anchored by a
  :class:`MonthStamp`; there is no sub-monthly resolution.
- Error metrics are plain unweighted means over grid cells.  Cosine-latitude
  weighting is available separately via :func:`area_weighted_mae` and is
  never the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CalendarError,
    CoverageError,
    DimensionError,
    MaskError,
    ValidationError,
)


@dataclass(frozen=True, order=True)
class MonthStamp:
    """A calendar month, e.g. ``MonthStamp(2016, 1)`` for January 2016."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValidationError(f"month must be in 1..12, got {self.month}")

    def add_months(self, k: int) -> "MonthStamp":
        total = self.year * 12 + (self.month - 1) + k
        return MonthStamp(total // 12, total % 12 + 1)

    @classmethod
    def parse(cls, text: str) -> "MonthStamp":
        """Parse a ``YYYY-MM`` string."""
        try:
            y, m = text.split("-")
            return cls(int(y), int(m))
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"cannot parse month stamp {text!r}: expected YYYY-MM") from exc

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


def month_index(series_start: MonthStamp, stamp: MonthStamp) -> int:
    """Number of whole months from ``series_start`` to ``stamp`` (>= 0)."""
    k = (stamp.year - series_start.year) * 12 + (stamp.month - series_start.month)
    if k < 0:
        raise CalendarError(f"stamp {stamp} precedes series start {series_start}")
    return k


def row_latitudes(n_lat: int) -> np.ndarray:
    """Latitude of each row, south to north, with a row exactly on the equator
    whenever ``n_lat`` is even."""
    return -90.0 + 180.0 * np.arange(n_lat) / n_lat


def check_field(values, name: str = "field") -> np.ndarray:
    """Validate a single 2-D grid field and return it as an ndarray."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (n_lat, n_lon), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass
class GridSeries:
    """A stack of consecutive monthly fields with a calendar anchor.

    ``values`` has shape ``(n_time, n_lat, n_lon)``; entry ``k`` is the field
    for ``start`` advanced by ``k`` months.
    """

    start: MonthStamp
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise DimensionError(
                f"series values must be (n_time, n_lat, n_lon), got shape {self.values.shape}"
            )
        if self.values.shape[1] < 1 or self.values.shape[2] < 1:
            raise DimensionError("series grid must have at least one row and column")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("series contains non-finite values")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_lat(self) -> int:
        return self.values.shape[1]

    @property
    def n_lon(self) -> int:
        return self.values.shape[2]

    @property
    def end(self) -> MonthStamp:
        return self.start.add_months(len(self) - 1)

    def stamp_at(self, k: int) -> MonthStamp:
        if not 0 <= k < len(self):
            raise CalendarError(f"index {k} outside series of length {len(self)}")
        return self.start.add_months(k)

    def index_of(self, stamp: MonthStamp) -> int:
        k = month_index(self.start, stamp)
        if k >= len(self):
            raise CalendarError(f"stamp {stamp} lies after series end {self.end}")
        return k

    def stamps(self) -> list[MonthStamp]:
        return [self.start.add_months(k) for k in range(len(self))]

    def slice_range(self, first: MonthStamp, last: MonthStamp) -> "GridSeries":
        """Sub-series covering ``first..last`` inclusive."""
        if last < first:
            raise CalendarError(f"range end {last} precedes range start {first}")
        i = self.index_of(first)
        j = self.index_of(last)
        return GridSeries(first, self.values[i : j + 1])


@dataclass
class RegionMask:
    """0/1 field selecting the cells of a named region."""

    name: str
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        check_field(self.weights, f"mask {self.name!r}")
        bad = ~np.isin(self.weights, (0.0, 1.0))
        if bad.any():
            raise MaskError(f"mask {self.name!r} contains values other than 0/1")
        if not self.weights.any():
            raise MaskError(f"mask {self.name!r} selects no cells")

    @property
    def n_lat(self) -> int:
        return self.weights.shape[0]

    @property
    def n_lon(self) -> int:
        return self.weights.shape[1]

    @property
    def cell_count(self) -> int:
        return int(self.weights.sum())


@dataclass
class Climatology:
    """Per-calendar-month mean fields over a stated base range."""

    months: np.ndarray  # (12, n_lat, n_lon); index 0 = January
    base_range: tuple[MonthStamp, MonthStamp]

    def __post_init__(self):
        self.months = np.asarray(self.months)
        if self.months.shape[0] != 12 or self.months.ndim != 3:
            raise DimensionError(
                f"climatology must hold 12 fields, got shape {self.months.shape}"
            )

    def month(self, m: int) -> np.ndarray:
        if not 1 <= m <= 12:
            raise CalendarError(f"calendar month must be in 1..12, got {m}")
        return self.months[m - 1]


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def mae(pred, truth) -> float:
    """Mean absolute difference over all grid cells (unweighted)."""
    p, t = _as_f64(pred), _as_f64(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    return float(np.mean(np.abs(p - t)))


def masked_mae(pred, truth, mask: RegionMask) -> float:
    """Mean absolute difference restricted to cells where the mask is 1."""
    p, t = _as_f64(pred), _as_f64(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    if mask.weights.shape != p.shape:
        raise DimensionError(
            f"mask {mask.name!r} shape {mask.weights.shape} does not match field {p.shape}"
        )
    sel = mask.weights == 1.0
    if not sel.any():
        raise MaskError(f"mask {mask.name!r} selects no cells")
    return float(np.mean(np.abs(p - t)[sel]))


def area_weighted_mae(pred, truth) -> float:
    """Cosine-latitude weighted MAE; an optional diagnostic, never the default."""
    p, t = _as_f64(pred), _as_f64(truth)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    w = np.cos(np.deg2rad(row_latitudes(p.shape[0])))
    w = np.clip(w, 0.0, None)[:, None] * np.ones_like(p)
    return float(np.sum(np.abs(p - t) * w) / np.sum(w))


def monthly_climatology(
    series: GridSeries, base_range: tuple[MonthStamp, MonthStamp] | None = None
) -> Climatology:
    """Per-gridpoint mean of every calendar month over ``base_range``.

    Every calendar month must occur at least once in the range (so the range
    has to span 12 consecutive months or more).
    """
    if base_range is None:
        base_range = (series.start, series.end)
    first, last = base_range
    i = series.index_of(first)
    j = series.index_of(last)
    if j < i:
        raise CalendarError(f"base range end {last} precedes start {first}")
    months = [first.add_months(k).month for k in range(j - i + 1)]
    out = np.empty((12, series.n_lat, series.n_lon), dtype=np.float64)
    month_arr = np.asarray(months)
    block = _as_f64(series.values[i : j + 1])
    for m in range(1, 13):
        sel = month_arr == m
        if not sel.any():
            raise CoverageError(
                f"calendar month {m} never occurs in base range {first}:{last}"
            )
        out[m - 1] = block[sel].mean(axis=0)
    return Climatology(out, (first, last))


def anomaly_series(series: GridSeries, clim: Climatology) -> GridSeries:
    """Subtract each field's calendar-month climatology entry."""
    if clim.months.shape[1:] != series.values.shape[1:]:
        raise DimensionError(
            f"climatology grid {clim.months.shape[1:]} does not match series "
            f"grid {series.values.shape[1:]}"
        )
    month_idx = np.asarray([series.stamp_at(k).month - 1 for k in range(len(series))])
    out = _as_f64(series.values) - clim.months[month_idx]
    return GridSeries(series.start, out)
