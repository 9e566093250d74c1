"""CGT dataset files, normalization statistics, and the synthetic generator.

CGT ("compact grid of temperatures") is the package's only on-disk grid
format.  Little-endian layout:

    offset  size  field
    0       4     magic "CGT1"
    4       4     n_time  (u32)
    8       4     n_lat   (u32)
    12      4     n_lon   (u32)
    16      4     start_year (i32)
    20      1     start_month (u8, 1..12)
    21      1     kind (u8): 0 temperature series, 1 elevation, 2 mask
    22      2     reserved, must be zero
    24      ...   payload: n_time*n_lat*n_lon IEEE-754 f32, time-major then
                  latitude-row-major (row 0 = southernmost)

Elevation (kind 1, kilometres) and masks (kind 2, values exactly 0.0/1.0)
must have ``n_time == 1``.  start_year/start_month are ignored for those
kinds and written as 0-01.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CalendarError,
    DegenerateStatsError,
    DimensionError,
    MaskError,
    ParseError,
    ValidationError,
)
from .grid import GridSeries, MonthStamp, RegionMask, check_field

MAGIC = b"CGT1"
HEADER = struct.Struct("<4sIIIiBB2x")
HEADER_SIZE = HEADER.size  # 24 bytes

KIND_SERIES = 0
KIND_ELEVATION = 1
KIND_MASK = 2


def write_cgt(obj, path) -> None:
    """Write a GridSeries, elevation field (2-D array), or RegionMask.

    float64 inputs are rounded to f32; writing is deterministic, so equal
    objects produce byte-identical files.
    """
    path = Path(path)
    if isinstance(obj, GridSeries):
        values = obj.values
        header = HEADER.pack(
            MAGIC, len(obj), obj.n_lat, obj.n_lon, obj.start.year, obj.start.month, KIND_SERIES
        )
    elif isinstance(obj, RegionMask):
        values = obj.weights[None]
        header = HEADER.pack(MAGIC, 1, obj.n_lat, obj.n_lon, 0, 1, KIND_MASK)
    else:
        arr = np.asarray(obj)
        if arr.ndim != 2:
            raise ValidationError(
                f"elevation must be a single 2-D field, got shape {arr.shape}"
            )
        check_field(arr, "elevation")
        values = arr[None]
        header = HEADER.pack(MAGIC, 1, arr.shape[0], arr.shape[1], 0, 1, KIND_ELEVATION)
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_cgt(path):
    """Read a CGT file; returns a GridSeries, a 2-D elevation array, or a
    RegionMask depending on the header kind."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise ParseError(f"{path}: truncated header, {len(raw)} bytes < {HEADER_SIZE} (offset 0)")
    magic, n_time, n_lat, n_lon, start_year, start_month, kind = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at byte offset 0")
    if n_time < 1 or n_lat < 1 or n_lon < 1:
        raise ParseError(f"{path}: zero dimension in header (offset 4)")
    if not 1 <= start_month <= 12:
        raise ParseError(f"{path}: start month {start_month} out of range at byte offset 20")
    if kind not in (KIND_SERIES, KIND_ELEVATION, KIND_MASK):
        raise ParseError(f"{path}: unknown kind {kind} at byte offset 21")
    if kind != KIND_SERIES and n_time != 1:
        raise ParseError(f"{path}: kind {kind} requires n_time=1, got {n_time} (offset 4)")
    expected = n_time * n_lat * n_lon * 4
    got = len(raw) - HEADER_SIZE
    if got != expected:
        raise ParseError(
            f"{path}: payload is {got} bytes, header promises {expected} (offset {HEADER_SIZE})"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(n_time, n_lat, n_lon)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise ParseError(
            f"{path}: non-finite payload value at byte offset {HEADER_SIZE + 4 * i}"
        )
    values = values.copy()  # decouple from the read buffer
    if kind == KIND_SERIES:
        return GridSeries(MonthStamp(start_year, start_month), values)
    if kind == KIND_ELEVATION:
        return values[0]
    off_domain = ~np.isin(values[0], (0.0, 1.0))
    if off_domain.any():
        i = int(np.flatnonzero(off_domain.ravel())[0])
        raise MaskError(
            f"{path}: mask value {values[0].ravel()[i]} not in {{0,1}} "
            f"at byte offset {HEADER_SIZE + 4 * i}"
        )
    return RegionMask(path.stem, values[0])


@dataclass
class NormStats:
    """Scalar normalization statistics frozen into checkpoints.

    One mean/std pair covers every temperature channel; elevation has its
    own pair.  Standard deviations are population (divide-by-N).
    """

    mean: float
    std: float
    computed_over: str
    elevation_mean: float = 0.0
    elevation_std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateStatsError(f"temperature std must be positive, got {self.std}")
        if not self.elevation_std > 0:
            raise DegenerateStatsError(
                f"elevation std must be positive, got {self.elevation_std}"
            )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "computed_over": self.computed_over,
            "elevation_mean": self.elevation_mean,
            "elevation_std": self.elevation_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**d)


def compute_norm_stats(train_series, elevation=None, label: str = "unspecified") -> NormStats:
    """Pool all temperature values of the training series and take mean/std."""
    series_list = list(train_series)
    if not series_list:
        raise ValidationError("need at least one training series for statistics")
    values = np.concatenate([s.values.ravel() for s in series_list]).astype(np.float64)
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        raise DegenerateStatsError("training data is constant; cannot normalize")
    emean, estd = 0.0, 1.0
    if elevation is not None:
        e = np.asarray(elevation, dtype=np.float64)
        emean = float(e.mean())
        estd = float(e.std())
        if estd == 0.0:
            raise DegenerateStatsError("elevation field is constant; cannot normalize")
    return NormStats(mean, std, label, emean, estd)


def normalize(x, stats: NormStats):
    return (np.asarray(x) - stats.mean) / stats.std


def denormalize(x, stats: NormStats):
    return np.asarray(x) * stats.std + stats.mean


def ensemble_mean(members) -> GridSeries:
    """Per-cell arithmetic mean of several calendar-aligned series."""
    members = list(members)
    if not members:
        raise ValidationError("ensemble mean needs at least one member")
    ref = members[0]
    for m in members[1:]:
        if m.values.shape != ref.values.shape:
            raise DimensionError(
                f"member shape {m.values.shape} differs from {ref.values.shape}"
            )
        if m.start != ref.start:
            raise CalendarError(f"member start {m.start} differs from {ref.start}")
    acc = np.zeros(ref.values.shape, dtype=np.float64)
    for m in members:
        acc += m.values
    mean = (acc / len(members)).astype(ref.values.dtype)
    return GridSeries(ref.start, mean)


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic climatology generator.

    The generated world has a pole-to-equator temperature gradient, a
    latitude-scaled annual cycle, a linear trend, a fixed bumpy topography
    cooled by a lapse rate, and white Gaussian noise.
    """

    n_lat: int = 24
    n_lon: int = 48
    n_years: int = 80
    base_equator: float = 28.0  # degC at the equator row
    pole_drop: float = 48.0  # degC removed at the poles
    seasonal_amplitude_pole: float = 16.0  # degC annual-cycle amplitude at the poles
    phase_month: int = 7
    trend: float = 0.2  # degC per decade
    noise_std: float = 0.5  # degC
    lapse_rate: float = 6.5  # degC per km of elevation
    elevation_scale: float = 2.0  # km
    seed: int = 0

    def validate(self):
        if self.n_lat <= 0 or self.n_lat % 8 != 0:
            raise ValidationError(f"n_lat must be a positive multiple of 8, got {self.n_lat}")
        if self.n_lon <= 0 or self.n_lon % 8 != 0:
            raise ValidationError(f"n_lon must be a positive multiple of 8, got {self.n_lon}")
        if self.n_years < 1:
            raise ValidationError(f"n_years must be >= 1, got {self.n_years}")
        if not 1 <= self.phase_month <= 12:
            raise ValidationError(f"phase_month must be in 1..12, got {self.phase_month}")
        if self.noise_std < 0:
            raise ValidationError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit an unsigned 64-bit integer")


def _bumpy_elevation(rng, n_lat, n_lon, scale) -> np.ndarray:
    """Sum of three smooth random bumps, periodic in longitude; km, f32."""
    ii, jj = np.meshgrid(np.arange(n_lat), np.arange(n_lon), indexing="ij")
    elev = np.zeros((n_lat, n_lon), dtype=np.float64)
    for _ in range(3):
        ci = rng.uniform(0, n_lat)
        cj = rng.uniform(0, n_lon)
        si = rng.uniform(n_lat / 10, n_lat / 4)
        sj = rng.uniform(n_lon / 10, n_lon / 4)
        amp = rng.uniform(0.3, 1.0)
        dj = np.abs(jj - cj)
        dj = np.minimum(dj, n_lon - dj)  # wrap around the longitude seam
        elev += amp * np.exp(-((ii - ci) ** 2) / (2 * si**2) - dj**2 / (2 * sj**2))
    return (elev * scale).astype(np.float32)


def generate_synthetic(
    cfg: SyntheticConfig, start: MonthStamp = MonthStamp(2000, 1)
) -> tuple[GridSeries, np.ndarray]:
    """Deterministically generate a temperature series and its elevation map.

    Cell (i, j) at month step t takes the value

        base_equator - pole_drop*|lat_i|/90
        + seasonal_amplitude_pole*|lat_i|/90 * cos(2*pi*(month(t) - phase_month)/12)
        + trend * t/120
        - lapse_rate * elev(i, j)
        + Gaussian noise

    with lat_i = -90 + 180*i/n_lat, so row n_lat/2 sits exactly on the
    equator.  Values are stored as f32.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    elev32 = _bumpy_elevation(rng, cfg.n_lat, cfg.n_lon, cfg.elevation_scale)
    elev = elev32.astype(np.float64)
    lat = -90.0 + 180.0 * np.arange(cfg.n_lat) / cfg.n_lat
    profile = cfg.base_equator - cfg.pole_drop * np.abs(lat) / 90.0
    amplitude = cfg.seasonal_amplitude_pole * np.abs(lat) / 90.0
    n_months = 12 * cfg.n_years
    noise = rng.normal(0.0, cfg.noise_std, size=(n_months, cfg.n_lat, cfg.n_lon))
    values = np.empty((n_months, cfg.n_lat, cfg.n_lon), dtype=np.float32)
    for t in range(n_months):
        month = (start.month - 1 + t) % 12 + 1
        cosv = math.cos(2.0 * math.pi * (month - cfg.phase_month) / 12.0)
        fld = (
            profile[:, None]
            + amplitude[:, None] * cosv
            + cfg.trend * (t / 120.0)
            - cfg.lapse_rate * elev
            + noise[t]
        )
        values[t] = fld.astype(np.float32)
    return GridSeries(start, values), elev32
