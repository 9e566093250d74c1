"""The 14 temporal input-window cases and sample assembly.

A *case* decides which past months are stacked as input channels when
predicting month ``t``:

- sequential ``seq-L`` (L in 6,12,18,24,30,36): months t-1 .. t-L;
- periodic ``y<Y>m<D>`` (Y in 1..4, D in 1..2): month t-1 plus, for each lag
  year k <= Y, the window t-12k-D .. t-12k+D around the same calendar month.

Channels are ordered by ascending month offset (t-1 first); an optional
elevation channel goes last.  This ordering is part of the checkpoint
contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import NormStats
from .errors import CalendarError, DimensionError, InsufficientHistoryError
from .grid import GridSeries, MonthStamp

SEQUENTIAL_LENGTHS = (6, 12, 18, 24, 30, 36)
LAG_YEARS = (1, 2, 3, 4)
NEIGHBOR_MONTHS = (1, 2)


@dataclass(frozen=True)
class TemporalCase:
    id: str
    family: str  # "sequential" | "periodic"
    window_len: int | None = None
    lag_years: int | None = None
    neighbor_months: int | None = None

    @property
    def label(self) -> str:
        """Human-readable name, e.g. "3 years 2 months"."""
        if self.family == "sequential":
            return f"{self.window_len} months"
        y, m = self.lag_years, self.neighbor_months
        return f"{y} year{'s' if y != 1 else ''} {m} month{'s' if m != 1 else ''}"

    def offsets(self) -> tuple[int, ...]:
        return offsets(self)


def enumerate_cases() -> list[TemporalCase]:
    """All 14 cases in canonical order: sequential by window length, then
    periodic by (lag years, neighbor months)."""
    cases = [
        TemporalCase(f"seq-{n}", "sequential", window_len=n) for n in SEQUENTIAL_LENGTHS
    ]
    cases += [
        TemporalCase(f"y{y}m{m}", "periodic", lag_years=y, neighbor_months=m)
        for y in LAG_YEARS
        for m in NEIGHBOR_MONTHS
    ]
    return cases


_CASES_BY_ID = {c.id: c for c in enumerate_cases()}


def case_by_id(case_id: str) -> TemporalCase:
    try:
        return _CASES_BY_ID[case_id]
    except KeyError:
        raise CalendarError(
            f"unknown case id {case_id!r}; valid ids: {', '.join(_CASES_BY_ID)}"
        ) from None


def canonical_index(case_id: str) -> int:
    """Position of a case in the canonical order (used for tie-breaking)."""
    return list(_CASES_BY_ID).index(case_by_id(case_id).id)


def offsets(case: TemporalCase) -> tuple[int, ...]:
    """Sorted positive month offsets looked up behind the target month."""
    if case.family == "sequential":
        return tuple(range(1, case.window_len + 1))
    out = {1}
    for k in range(1, case.lag_years + 1):
        out.update(range(12 * k - case.neighbor_months, 12 * k + case.neighbor_months + 1))
    return tuple(sorted(out))


def channel_count(case: TemporalCase, elevation: bool) -> int:
    return len(offsets(case)) + (1 if elevation else 0)


def valid_targets(series: GridSeries, case: TemporalCase) -> range:
    """Indices into the series that have enough history to be targets."""
    max_off = offsets(case)[-1]
    if len(series) <= max_off:
        raise InsufficientHistoryError(
            f"case {case.id} needs {max_off + 1} months of history, series has {len(series)}"
        )
    return range(max_off, len(series))


@dataclass
class Sample:
    """One training/inference example: stacked input channels and the target."""

    input: np.ndarray  # (C, n_lat, n_lon) f32, normalized
    target: np.ndarray  # (n_lat, n_lon) f32, degrees Celsius
    target_stamp: MonthStamp


def assemble_sample(
    series: GridSeries,
    elevation,
    norm: NormStats,
    case: TemporalCase,
    target_index: int,
) -> Sample:
    """Stack the case's lagged months (normalized) plus the optional
    elevation channel; the target stays in degrees Celsius."""
    offs = offsets(case)
    if not offs[-1] <= target_index < len(series):
        raise InsufficientHistoryError(
            f"target index {target_index} out of range for case {case.id} "
            f"(needs >= {offs[-1]}, series length {len(series)})"
        )
    n_channels = len(offs) + (1 if elevation is not None else 0)
    x = np.empty((n_channels, series.n_lat, series.n_lon), dtype=np.float32)
    for c, off in enumerate(offs):
        x[c] = (series.values[target_index - off] - norm.mean) / norm.std
    if elevation is not None:
        elev = np.asarray(elevation)
        if elev.shape != (series.n_lat, series.n_lon):
            raise DimensionError(
                f"elevation shape {elev.shape} does not match grid "
                f"({series.n_lat}, {series.n_lon})"
            )
        x[-1] = (elev - norm.elevation_mean) / norm.elevation_std
    target = np.asarray(series.values[target_index], dtype=np.float32)
    return Sample(x, target, series.stamp_at(target_index))


@dataclass
class SampleSet:
    """Samples pooled from one or more member series, all for one case."""

    case: TemporalCase
    with_elevation: bool
    samples: list[Sample]

    def __len__(self):
        return len(self.samples)

    @property
    def n_channels(self) -> int:
        return self.samples[0].input.shape[0]

    def inputs(self, indices=None) -> np.ndarray:
        idx = range(len(self.samples)) if indices is None else indices
        return np.stack([self.samples[i].input for i in idx])

    def targets(self, indices=None) -> np.ndarray:
        idx = range(len(self.samples)) if indices is None else indices
        return np.stack([self.samples[i].target for i in idx])[:, None]


def build_samples(
    series_list,
    case: TemporalCase,
    norm: NormStats,
    elevation=None,
) -> SampleSet:
    """Assemble every valid target of every member series.

    Members are pooled sample-by-sample; a sample never mixes months from
    two members.
    """
    if isinstance(series_list, GridSeries):
        series_list = [series_list]
    samples = []
    for series in series_list:
        for t in valid_targets(series, case):
            samples.append(assemble_sample(series, elevation, norm, case, t))
    return SampleSet(case, elevation is not None, samples)
