"""Forecast verification: baselines, regional/seasonal MAE, rankings,
anomaly-binned error statistics, regression diagnostics, and heatmap export.

Seasons follow the meteorological northern-hemisphere convention:
Winter = DJF, Spring = MAM, Summer = JJA, Fall = SON.  All error statistics
are unweighted means over grid cells (and plain means over months when
aggregating), in degrees Celsius.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CalendarError,
    CoverageError,
    DegenerateStatsError,
    DimensionError,
    InsufficientHistoryError,
    ValidationError,
)
from .grid import Climatology, GridSeries, MonthStamp, RegionMask, mae, masked_mae
from .stacking import canonical_index, enumerate_cases

SEASONS = ("Winter", "Spring", "Summer", "Fall")
_SEASON_OF_MONTH = {
    12: "Winter", 1: "Winter", 2: "Winter",
    3: "Spring", 4: "Spring", 5: "Spring",
    6: "Summer", 7: "Summer", 8: "Summer",
    9: "Fall", 10: "Fall", 11: "Fall",
}
GLOBAL_REGION = "Global"
DEFAULT_BIN_EDGES = tuple(float(e) for e in range(-10, 11))


def season_of(month: int) -> str:
    return _SEASON_OF_MONTH[month]


def persistence_forecast(series: GridSeries, target_index: int) -> np.ndarray:
    """The previous month's field, the naive baseline."""
    if target_index < 1:
        raise InsufficientHistoryError("persistence needs at least one preceding month")
    if target_index >= len(series):
        raise CalendarError(f"index {target_index} outside series of length {len(series)}")
    return series.values[target_index - 1]


def forecast_series(predict_fn, stamps) -> GridSeries:
    """Materialize a predictor into a series over the given months."""
    stamps = list(stamps)
    fields = [np.asarray(predict_fn(s)) for s in stamps]
    return GridSeries(stamps[0], np.stack(fields))


@dataclass
class SystemScores:
    """Error statistics for one forecasting system over one evaluation."""

    overall_mae: float
    per_region_mae: dict
    per_season_mae: dict
    per_region_season_mae: dict  # region -> season -> value
    mae_time_series: dict  # region -> list aligned with the report months
    mae_field: np.ndarray  # per-cell mean absolute error over time

    def to_dict(self) -> dict:
        return {
            "overall_mae": self.overall_mae,
            "per_region_mae": self.per_region_mae,
            "per_season_mae": self.per_season_mae,
            "per_region_season_mae": self.per_region_season_mae,
            "mae_time_series": self.mae_time_series,
            "mae_field": np.asarray(self.mae_field).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemScores":
        return cls(
            overall_mae=d["overall_mae"],
            per_region_mae=dict(d["per_region_mae"]),
            per_season_mae=dict(d["per_season_mae"]),
            per_region_season_mae={r: dict(s) for r, s in d["per_region_season_mae"].items()},
            mae_time_series={r: list(v) for r, v in d["mae_time_series"].items()},
            mae_field=np.asarray(d["mae_field"]),
        )


@dataclass
class EvalReport:
    months: list  # MonthStamp per evaluated month
    model: SystemScores
    baselines: dict = field(default_factory=dict)  # name -> SystemScores
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d["months"] = [str(m) for m in self.months]
        d["baselines"] = {k: v.to_dict() for k, v in self.baselines.items()}
        d["metadata"] = self.metadata
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            months=[MonthStamp.parse(m) for m in d["months"]],
            model=SystemScores.from_dict(d),
            baselines={k: SystemScores.from_dict(v) for k, v in d["baselines"].items()},
            metadata=dict(d.get("metadata", {})),
        )

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def systems(self) -> dict:
        out = {"model": self.model}
        out.update(self.baselines)
        return out

    def write_csv(self, path):
        """Summary table: one row per system x region x season (plus All)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["system", "region", "season", "mae"])
            for sys_name, scores in self.systems().items():
                w.writerow([sys_name, GLOBAL_REGION, "All", f"{scores.overall_mae:.6f}"])
                for season, v in scores.per_season_mae.items():
                    w.writerow([sys_name, GLOBAL_REGION, season, f"{v:.6f}"])
                for region, v in scores.per_region_mae.items():
                    if region == GLOBAL_REGION:
                        continue
                    w.writerow([sys_name, region, "All", f"{v:.6f}"])
                    for season, sv in scores.per_region_season_mae[region].items():
                        w.writerow([sys_name, region, season, f"{sv:.6f}"])

    def write_timeseries_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["month", "system", "region", "mae"])
            for sys_name, scores in self.systems().items():
                for region, values in scores.mae_time_series.items():
                    for stamp, v in zip(self.months, values):
                        w.writerow([str(stamp), sys_name, region, f"{v:.6f}"])


def _score_system(pred: GridSeries, truth: GridSeries, masks, months) -> SystemScores:
    n_months = len(months)
    regions = [GLOBAL_REGION] + [m.name for m in masks]
    ts = {r: [] for r in regions}
    abs_sum = np.zeros((truth.n_lat, truth.n_lon), dtype=np.float64)
    for k, stamp in enumerate(months):
        p = pred.values[pred.index_of(stamp)]
        t = truth.values[truth.index_of(stamp)]
        ts[GLOBAL_REGION].append(mae(p, t))
        for m in masks:
            ts[m.name].append(masked_mae(p, t, m))
        abs_sum += np.abs(p.astype(np.float64) - t.astype(np.float64))
    per_region = {r: float(np.mean(ts[r])) for r in regions}
    month_season = [season_of(s.month) for s in months]
    per_season = {}
    per_region_season = {r: {} for r in regions}
    for season in SEASONS:
        sel = [k for k in range(n_months) if month_season[k] == season]
        if not sel:
            continue
        per_season[season] = float(np.mean([ts[GLOBAL_REGION][k] for k in sel]))
        for r in regions:
            per_region_season[r][season] = float(np.mean([ts[r][k] for k in sel]))
    return SystemScores(
        overall_mae=per_region[GLOBAL_REGION],
        per_region_mae=per_region,
        per_season_mae=per_season,
        per_region_season_mae=per_region_season,
        mae_time_series=ts,
        mae_field=abs_sum / n_months,
    )


def evaluate(
    predictor,
    truth: GridSeries,
    eval_range: tuple[MonthStamp, MonthStamp],
    masks=(),
    baselines=None,
    clim_base: tuple[MonthStamp, MonthStamp] | None = None,
    metadata: dict | None = None,
) -> EvalReport:
    """Score a predictor (and baselines) against truth over a month range.

    ``predictor`` and each baseline may be a callable stamp -> field or an
    already-materialized GridSeries covering the range.
    """
    first, last = eval_range
    try:
        months = [
            first.add_months(k) for k in range(0, _span_months(first, last))
        ]
        for stamp in (first, last):
            truth.index_of(stamp)
    except CalendarError as exc:
        raise CoverageError(f"evaluation range {first}:{last} not covered by truth") from exc
    masks = list(masks)
    for m in masks:
        if m.weights.shape != (truth.n_lat, truth.n_lon):
            raise DimensionError(
                f"mask {m.name!r} shape {m.weights.shape} does not match "
                f"truth grid ({truth.n_lat}, {truth.n_lon})"
            )

    systems = {"model": _materialize(predictor, months)}
    for name, fn in (baselines or {}).items():
        systems[name] = _materialize(fn, months)

    scores = {name: _score_system(s, truth, masks, months) for name, s in systems.items()}
    meta = dict(metadata or {})
    meta.setdefault("eval_range", f"{first}:{last}")
    cb = clim_base or (first, last)
    meta.setdefault("climatology_base", f"{cb[0]}:{cb[1]}")
    meta.setdefault("regions", [GLOBAL_REGION] + [m.name for m in masks])
    return EvalReport(
        months=months,
        model=scores.pop("model"),
        baselines=scores,
        metadata=meta,
    )


def _span_months(first: MonthStamp, last: MonthStamp) -> int:
    n = (last.year - first.year) * 12 + (last.month - first.month) + 1
    if n < 1:
        raise CalendarError(f"range end {last} precedes start {first}")
    return n


def _materialize(predictor, months) -> GridSeries:
    if isinstance(predictor, GridSeries):
        missing = [s for s in months if not _covers(predictor, s)]
        if missing:
            raise CoverageError(f"prediction series missing months {missing[0]}..")
        idx0 = predictor.index_of(months[0])
        return GridSeries(months[0], predictor.values[idx0 : idx0 + len(months)])
    return forecast_series(predictor, months)


def _covers(series: GridSeries, stamp: MonthStamp) -> bool:
    try:
        series.index_of(stamp)
        return True
    except CalendarError:
        return False


# -- case ranking -------------------------------------------------------------


@dataclass
class RankTable:
    case_ids: list  # canonical order
    columns: list  # "Region/Season" labels plus "overall"
    ranks: dict  # column -> {case_id: rank 1..n}
    mae: dict  # column -> {case_id: mae}

    def to_dict(self) -> dict:
        return {
            "case_ids": self.case_ids,
            "columns": self.columns,
            "ranks": self.ranks,
            "mae": self.mae,
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "RankTable":
        d = json.loads(Path(path).read_text())
        return cls(d["case_ids"], d["columns"], d["ranks"], d["mae"])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "region", "season", "rank", "mae"])
            for col in self.columns:
                region, _, season = (
                    col.partition("/") if "/" in col else (col, "", col)
                )
                for case_id in self.case_ids:
                    w.writerow(
                        [
                            case_id,
                            region,
                            season,
                            self.ranks[col][case_id],
                            f"{self.mae[col][case_id]:.6f}",
                        ]
                    )


def rank_cases(reports) -> RankTable:
    """Rank the 14 temporal cases within every region x season cell.

    Rank 1 is the lowest MAE; ties break by canonical case order.  The
    "overall" column ranks the mean MAE across all cells.
    """
    reports = list(reports)
    n_cases = len(enumerate_cases())
    if len(reports) != n_cases:
        raise ValidationError(f"need exactly {n_cases} reports, got {len(reports)}")
    by_case = {}
    for r in reports:
        case_id = r.metadata.get("case_id")
        if case_id is None:
            raise ValidationError("every report needs metadata['case_id']")
        if case_id in by_case:
            raise ValidationError(f"duplicate case id {case_id!r}")
        canonical_index(case_id)  # validates the id
        by_case[case_id] = r
    case_ids = [c.id for c in enumerate_cases()]

    ref = reports[0].model.per_region_season_mae
    cells = [(region, season) for region in ref for season in ref[region]]
    for r in reports[1:]:
        other = r.model.per_region_season_mae
        if [(g, s) for g in other for s in other[g]] != cells:
            raise ValidationError("reports disagree on region/season structure")

    columns = [f"{region}/{season}" for region, season in cells] + ["overall"]
    values = {}
    for col, (region, season) in zip(columns, cells):
        values[col] = {
            cid: by_case[cid].model.per_region_season_mae[region][season]
            for cid in case_ids
        }
    values["overall"] = {
        cid: float(np.mean([values[col][cid] for col in columns[:-1]]))
        for cid in case_ids
    }

    ranks = {}
    for col, vals in values.items():
        ordered = sorted(case_ids, key=lambda cid: (vals[cid], canonical_index(cid)))
        ranks[col] = {cid: i + 1 for i, cid in enumerate(ordered)}
    return RankTable(case_ids, columns, ranks, values)


# -- anomaly-binned statistics -------------------------------------------------


@dataclass
class BinStats:
    edges: list
    counts: list  # per bin; shared by all systems (binning depends on truth only)
    systems: dict  # name -> {"median": [...], "q25": [...], "q75": [...]}

    def to_dict(self) -> dict:
        return {"edges": self.edges, "counts": self.counts, "systems": self.systems}

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count", "system", "median", "q25", "q75"])
            for i in range(len(self.counts)):
                for name, st in self.systems.items():
                    w.writerow(
                        [
                            self.edges[i],
                            self.edges[i + 1],
                            self.counts[i],
                            name,
                            _fmt(st["median"][i]),
                            _fmt(st["q25"][i]),
                            _fmt(st["q75"][i]),
                        ]
                    )


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def binned_abs_error(preds, truth: GridSeries, clim: Climatology, edges=None) -> BinStats:
    """Bucket per-(cell, month) absolute errors by the truth's anomaly.

    ``preds`` maps system name -> GridSeries calendar-aligned with truth (a
    bare GridSeries is treated as {"model": ...}).  Pairs whose anomaly falls
    outside the edges are dropped; per-bin medians and quartiles use linear
    interpolation.
    """
    if isinstance(preds, GridSeries):
        preds = {"model": preds}
    if not preds:
        raise ValidationError("need at least one prediction system")
    edges = np.asarray(DEFAULT_BIN_EDGES if edges is None else edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
        raise ValidationError("bin edges must be strictly increasing, length >= 2")
    for name, p in preds.items():
        if p.start != truth.start or len(p) != len(truth) or p.values.shape != truth.values.shape:
            raise CalendarError(f"prediction series {name!r} is not aligned with truth")
    if clim.months.shape[1:] != truth.values.shape[1:]:
        raise DimensionError("climatology grid does not match truth grid")
    if len(truth) == 0:
        raise CoverageError("empty overlap range")

    month_idx = np.asarray([truth.stamp_at(k).month - 1 for k in range(len(truth))])
    anom = truth.values.astype(np.float64) - clim.months[month_idx]
    flat_anom = anom.ravel()
    in_range = (flat_anom >= edges[0]) & (flat_anom <= edges[-1])
    bin_of = np.digitize(flat_anom, edges) - 1
    bin_of = np.clip(bin_of, 0, len(edges) - 2)  # fold the right edge into the last bin

    n_bins = len(edges) - 1
    counts = [int(np.sum(in_range & (bin_of == b))) for b in range(n_bins)]
    systems = {}
    for name, p in preds.items():
        ae = np.abs(p.values.astype(np.float64) - truth.values.astype(np.float64)).ravel()
        med, q25, q75 = [], [], []
        for b in range(n_bins):
            sel = in_range & (bin_of == b)
            if not sel.any():
                med.append(None)
                q25.append(None)
                q75.append(None)
                continue
            vals = ae[sel]
            med.append(float(np.percentile(vals, 50)))
            q25.append(float(np.percentile(vals, 25)))
            q75.append(float(np.percentile(vals, 75)))
        systems[name] = {"median": med, "q25": q25, "q75": q75}
    return BinStats(edges.tolist(), counts, systems)


# -- regression diagnostics ----------------------------------------------------


@dataclass
class RegressionStats:
    slope: float
    intercept: float
    r_squared: float
    n: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "n": self.n,
        }


def regression_stats(pred_values, truth_values) -> RegressionStats:
    """Least-squares fit pred = slope * truth + intercept, with R^2."""
    pred = np.asarray(pred_values, dtype=np.float64).ravel()
    truth = np.asarray(truth_values, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise DimensionError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise ValidationError("regression needs at least two points")
    if np.ptp(truth) == 0:
        raise DegenerateStatsError("truth values are constant; fit is degenerate")
    slope, intercept = np.polyfit(truth, pred, 1)
    resid = pred - (slope * truth + intercept)
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((pred - pred.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionStats(float(slope), float(intercept), float(r2), int(pred.size))


# -- heatmap export --------------------------------------------------------------


def emit_heatmap(field_values, path, value_range=None) -> Path:
    """Write a field as binary PGM (P5), north up, with a text sidecar.

    Values map linearly from [min, max] (or ``value_range``) to 0..255; a
    degenerate range maps everything to 0.  The sidecar ``<path>.txt``
    records the mapping.
    """
    arr = np.asarray(field_values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"heatmap needs a 2-D field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("heatmap field contains non-finite values")
    lo, hi = value_range if value_range is not None else (arr.min(), arr.max())
    if hi > lo:
        scaled = np.clip((arr - lo) / (hi - lo) * 255.0, 0.0, 255.0)
        bytes_img = np.round(scaled).astype(np.uint8)
    else:
        bytes_img = np.zeros(arr.shape, dtype=np.uint8)
    north_up = bytes_img[::-1]  # storage is south-to-north
    path = Path(path)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(north_up.tobytes())
    sidecar = path.with_name(path.name + ".txt")
    sidecar.write_text(
        f"pgm: {path.name}\n"
        f"shape: {h} rows x {w} cols (top row = northernmost)\n"
        f"value_at_0: {lo!r}\n"
        f"value_at_255: {hi!r}\n"
        "mapping: byte = round(255 * (value - value_at_0) / (value_at_255 - value_at_0)), "
        "clipped; degenerate range -> all zero bytes\n"
    )
    return path
