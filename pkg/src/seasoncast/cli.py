"""Command-line front door.

Commands: synth, train, finetune, evaluate, baseline (persistence/ensemble),
rank, heatmap.  Every run writes a ``manifest.json`` next to its outputs with
the resolved configuration, input digests, seed, and timings.  Exit codes:
0 success, 2 usage error, 3 data error, 4 runtime error (e.g. divergence).
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import __version__
from .dataio import (
    NormStats,
    SyntheticConfig,
    compute_norm_stats,
    ensemble_mean,
    generate_synthetic,
    read_cgt,
    write_cgt,
)
from .errors import SeasoncastError, ValidationError
from .evaluation import (
    EvalReport,
    binned_abs_error,
    emit_heatmap,
    evaluate,
    forecast_series,
    persistence_forecast,
    rank_cases,
)
from .grid import GridSeries, MonthStamp, RegionMask, monthly_climatology
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .stacking import SampleSet, build_samples, case_by_id, channel_count, enumerate_cases
from .training import TrainConfig, finetune, predict, train
from . import plots

EXIT_DATA = 3
EXIT_RUNTIME = 4


def main():
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except SeasoncastError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME if exc.runtime else EXIT_DATA)


@click.group()
@click.version_option(__version__)
def cli():
    """Seasonal temperature forecasting pipeline."""


@contextmanager
def _flags_validated():
    """Invalid flag combinations surface as usage errors (exit 2)."""
    try:
        yield
    except ValidationError as exc:
        raise click.UsageError(str(exc)) from exc


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, command, config, inputs, seed, started, outputs):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "elapsed_seconds": round(time.time() - started, 3),
        "outputs": sorted(str(o) for o in outputs),
    }
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _parse_range(text) -> tuple[MonthStamp, MonthStamp]:
    try:
        a, b = text.split(":")
    except ValueError:
        raise click.UsageError(f"range must be YYYY-MM:YYYY-MM, got {text!r}") from None
    with _flags_validated():
        first, last = MonthStamp.parse(a), MonthStamp.parse(b)
    if last < first:
        raise click.UsageError(f"range end {last} precedes start {first}")
    return first, last


def _read_series(path) -> GridSeries:
    obj = read_cgt(path)
    if not isinstance(obj, GridSeries):
        raise SeasoncastError(f"{path} is not a temperature series file")
    return obj


def _read_elevation(path) -> np.ndarray:
    obj = read_cgt(path)
    if not isinstance(obj, np.ndarray):
        raise SeasoncastError(f"{path} is not an elevation file")
    return obj


def _read_mask(path) -> RegionMask:
    obj = read_cgt(path)
    if not isinstance(obj, RegionMask):
        raise SeasoncastError(f"{path} is not a mask file")
    return obj


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    if (path / "weights").is_dir():
        return path
    if (path / "checkpoint" / "weights").is_dir():
        return path / "checkpoint"
    raise SeasoncastError(f"no checkpoint found under {path}")


# -- synth -------------------------------------------------------------------


@cli.command()
@click.option("--lat", "n_lat", type=int, required=True, help="Latitude rows (multiple of 8).")
@click.option("--lon", "n_lon", type=int, required=True, help="Longitude columns (multiple of 8).")
@click.option("--years", "n_years", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--start-year", type=int, default=2000, show_default=True)
@click.option("--base-equator", type=float, default=28.0, show_default=True)
@click.option("--pole-drop", type=float, default=48.0, show_default=True)
@click.option("--seasonal-amplitude", type=float, default=16.0, show_default=True)
@click.option("--phase-month", type=int, default=7, show_default=True)
@click.option("--trend", type=float, default=0.2, show_default=True, help="degC per decade.")
@click.option("--noise-std", type=float, default=0.5, show_default=True)
@click.option("--lapse-rate", type=float, default=6.5, show_default=True)
@click.option("--elevation-scale", type=float, default=2.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(n_lat, n_lon, n_years, seed, start_year, base_equator, pole_drop,
          seasonal_amplitude, phase_month, trend, noise_std, lapse_rate,
          elevation_scale, out_dir):
    """Generate a synthetic temperature series plus its elevation map."""
    started = time.time()
    cfg = SyntheticConfig(
        n_lat=n_lat, n_lon=n_lon, n_years=n_years, base_equator=base_equator,
        pole_drop=pole_drop, seasonal_amplitude_pole=seasonal_amplitude,
        phase_month=phase_month, trend=trend, noise_std=noise_std,
        lapse_rate=lapse_rate, elevation_scale=elevation_scale, seed=seed,
    )
    with _flags_validated():
        cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series, elevation = generate_synthetic(cfg, start=MonthStamp(start_year, 1))
    temp_path = out / "temperature.cgt"
    elev_path = out / "elevation.cgt"
    write_cgt(series, temp_path)
    write_cgt(elevation, elev_path)
    _write_manifest(
        out, "synth", {**cfg.__dict__, "start_year": start_year}, [], seed, started,
        [temp_path, elev_path],
    )
    click.echo(f"wrote {temp_path} ({len(series)} months) and {elev_path}")


# -- train / finetune -----------------------------------------------------------


def _train_options(fn):
    opts = [
        click.option("--data", "data_paths", type=click.Path(exists=True), multiple=True,
                     required=True, help="Training series (repeatable for multiple members)."),
        click.option("--out", "out_dir", type=click.Path(), required=True),
        click.option("--lr", type=float, default=1e-5, show_default=True),
        click.option("--weight-decay", type=float, default=1e-3, show_default=True),
        click.option("--epochs", type=int, default=40, show_default=True),
        click.option("--batch-size", type=int, default=16, show_default=True),
        click.option("--scheduler-step", type=int, default=10, show_default=True),
        click.option("--scheduler-factor", type=float, default=0.1, show_default=True),
        click.option("--patience", type=int, default=5, show_default=True,
                     help="Early-stop patience in epochs; 0 disables."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--val-frac", type=float, default=0.1, show_default=True,
                     help="Chronological tail fraction of each member used for validation."),
        click.option("--shuffle/--no-shuffle", default=True, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _split_samples(series_list, case, norm, elevation, val_frac) -> tuple[SampleSet, SampleSet]:
    train_samples, val_samples = [], []
    for series in series_list:
        sset = build_samples(series, case, norm, elevation)
        n_val = max(1, math.ceil(val_frac * len(sset)))
        if n_val >= len(sset):
            raise ValidationError(
                f"validation fraction {val_frac} leaves no training samples "
                f"(member has {len(sset)})"
            )
        train_samples.extend(sset.samples[:-n_val])
        val_samples.extend(sset.samples[-n_val:])
    return (
        SampleSet(case, elevation is not None, train_samples),
        SampleSet(case, elevation is not None, val_samples),
    )


def _run_training(model, train_set, val_set, tcfg, out, optimizer_hparams, provenance):
    log_path = out / "training.log"
    with open(log_path, "w") as log_file:

        def emit(line):
            log_file.write(line + "\n")
            click.echo(line)

        history = train(model, train_set, val_set, tcfg, log=emit)
    ckpt_dir = save_checkpoint(
        model, out / "checkpoint", provenance=provenance, optimizer_hparams=optimizer_hparams
    )
    (out / "history.json").write_text(json.dumps(history.to_dict(), indent=2))
    plots.plot_training_history(history, out / "history.png")
    return history, ckpt_dir


def _train_config(lr, weight_decay, epochs, batch_size, scheduler_step,
                  scheduler_factor, patience, seed, shuffle) -> TrainConfig:
    tcfg = TrainConfig(
        learning_rate=lr, weight_decay=weight_decay, epochs=epochs,
        batch_size=batch_size, scheduler_step_epochs=scheduler_step,
        scheduler_factor=scheduler_factor,
        early_stop_patience=None if patience == 0 else patience,
        seed=seed, shuffle=shuffle,
    )
    with _flags_validated():
        tcfg.validate()
    return tcfg


@cli.command("train")
@click.option("--case", "case_id", type=click.Choice([c.id for c in enumerate_cases()]),
              required=True)
@click.option("--arch", type=click.Choice(["unet", "unetpp"]), default="unetpp",
              show_default=True)
@click.option("--width", type=int, default=32, show_default=True, help="Base channel width.")
@click.option("--elevation", "elevation_path", type=click.Path(exists=True), default=None,
              help="Elevation CGT; adds an input channel.")
@click.option("--padding", type=click.Choice(["circular-both", "circular-lon-reflect-lat"]),
              default="circular-both", show_default=True)
@_train_options
def cmd_train(case_id, arch, width, elevation_path, padding, data_paths, out_dir, lr,
              weight_decay, epochs, batch_size, scheduler_step, scheduler_factor,
              patience, seed, val_frac, shuffle):
    """Train a model from scratch on one or more member series."""
    started = time.time()
    tcfg = _train_config(lr, weight_decay, epochs, batch_size, scheduler_step,
                         scheduler_factor, patience, seed, shuffle)
    case = case_by_id(case_id)
    members = [_read_series(p) for p in data_paths]
    elevation = _read_elevation(elevation_path) if elevation_path else None
    norm = compute_norm_stats(members, elevation, label=",".join(Path(p).name for p in data_paths))
    train_set, val_set = _split_samples(members, case, norm, elevation, val_frac)
    mcfg = ModelConfig(
        arch=arch,
        in_channels=channel_count(case, elevation is not None),
        case_id=case_id,
        norm_stats=norm,
        base_width=width,
        elevation=elevation is not None,
        padding_mode=padding,
    )
    with _flags_validated():
        mcfg.validate()
    model = build_model(mcfg, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = {
        "datasets": [str(p) for p in data_paths],
        "elevation": str(elevation_path) if elevation_path else None,
        "train_samples": len(train_set),
        "val_samples": len(val_set),
        "phase": "pretrain",
    }
    opt_h = {"optimizer": "adam", **tcfg.to_dict()}
    history, _ = _run_training(model, train_set, val_set, tcfg, out, opt_h, provenance)
    inputs = list(data_paths) + ([elevation_path] if elevation_path else [])
    _write_manifest(
        out, "train",
        {"case": case_id, "arch": arch, "width": width, "padding": padding,
         "val_frac": val_frac, **opt_h},
        inputs, seed, started,
        [out / "checkpoint", out / "history.json", out / "training.log"],
    )
    click.echo(
        f"best epoch {history.best_epoch} "
        f"(val_mse={history.best_validation_loss:.6f}); checkpoint at {out / 'checkpoint'}"
    )


@cli.command("finetune")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--elevation", "elevation_path", type=click.Path(exists=True), default=None)
@_train_options
def cmd_finetune(ckpt_path, elevation_path, data_paths, out_dir, lr, weight_decay, epochs,
                 batch_size, scheduler_step, scheduler_factor, patience, seed, val_frac,
                 shuffle):
    """Continue training a checkpoint on new data with frozen normalization."""
    started = time.time()
    tcfg = _train_config(lr, weight_decay, epochs, batch_size, scheduler_step,
                         scheduler_factor, patience, seed, shuffle)
    model, manifest = load_checkpoint(_resolve_checkpoint(ckpt_path))
    case = case_by_id(model.cfg.case_id)
    members = [_read_series(p) for p in data_paths]
    elevation = _read_elevation(elevation_path) if elevation_path else None
    if model.cfg.elevation and elevation is None:
        raise SeasoncastError("checkpoint expects an elevation channel; pass --elevation")
    train_set, val_set = _split_samples(members, case, model.cfg.norm_stats, elevation, val_frac)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = {
        "datasets": [str(p) for p in data_paths],
        "elevation": str(elevation_path) if elevation_path else None,
        "train_samples": len(train_set),
        "val_samples": len(val_set),
        "phase": "finetune",
        "parent_checkpoint": str(ckpt_path),
    }
    opt_h = {"optimizer": "adam", **tcfg.to_dict()}
    history, _ = _run_training(model, train_set, val_set, tcfg, out, opt_h, provenance)
    inputs = list(data_paths) + ([elevation_path] if elevation_path else [])
    _write_manifest(
        out, "finetune",
        {"checkpoint": str(ckpt_path), "case": model.cfg.case_id, "val_frac": val_frac, **opt_h},
        inputs, seed, started,
        [out / "checkpoint", out / "history.json", out / "training.log"],
    )
    click.echo(
        f"best epoch {history.best_epoch} "
        f"(val_mse={history.best_validation_loss:.6f}); checkpoint at {out / 'checkpoint'}"
    )


# -- evaluation ------------------------------------------------------------------


def _emit_report(report, out, figures=True):
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / "report.json")
    report.write_csv(out / "report.csv")
    report.write_timeseries_csv(out / "timeseries.csv")
    written = [out / "report.json", out / "report.csv", out / "timeseries.csv"]
    for name, scores in report.systems().items():
        pgm = out / f"mae_field_{name}.pgm"
        emit_heatmap(scores.mae_field, pgm)
        written.append(pgm)
        if figures:
            png = out / f"mae_field_{name}.png"
            plots.plot_field(scores.mae_field, png, title=f"MAE ({name})")
            written.append(png)
    if figures:
        plots.plot_mae_time_series(report, out / "timeseries.png")
        written.append(out / "timeseries.png")
    return written


@cli.command("evaluate")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--range", "range_text", required=True, help="Evaluation months, YYYY-MM:YYYY-MM.")
@click.option("--mask", "mask_paths", type=click.Path(exists=True), multiple=True)
@click.option("--member", "member_paths", type=click.Path(exists=True), multiple=True,
              help="Member series for the ensemble-mean baseline.")
@click.option("--elevation", "elevation_path", type=click.Path(exists=True), default=None)
@click.option("--persistence/--no-persistence", default=True, show_default=True)
@click.option("--clim-base", "clim_base_text", default=None,
              help="Climatology base range for anomaly bins (default: the eval range).")
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_evaluate(ckpt_path, truth_path, range_text, mask_paths, member_paths,
                 elevation_path, persistence, clim_base_text, figures, out_dir):
    """Score a checkpoint against a truth series, with baselines and bins."""
    started = time.time()
    eval_range = _parse_range(range_text)
    model, _ = load_checkpoint(_resolve_checkpoint(ckpt_path))
    truth = _read_series(truth_path)
    masks = [_read_mask(p) for p in mask_paths]
    elevation = _read_elevation(elevation_path) if elevation_path else None

    stamps = truth.slice_range(*eval_range).stamps()
    preds = {
        "model": forecast_series(
            lambda stamp: predict(model, truth, elevation, stamp), stamps
        )
    }
    if persistence:
        preds["persistence"] = forecast_series(
            lambda stamp: persistence_forecast(truth, truth.index_of(stamp)), stamps
        )
    if member_paths:
        members = [_read_series(p) for p in member_paths]
        preds["ensemble_mean"] = ensemble_mean(members).slice_range(*eval_range)

    clim_base = _parse_range(clim_base_text) if clim_base_text else eval_range
    metadata = {
        "case_id": model.cfg.case_id,
        "arch": model.cfg.arch,
        "checkpoint": str(ckpt_path),
        "truth": str(truth_path),
    }
    report = evaluate(
        preds["model"], truth, eval_range, masks=masks,
        baselines={k: v for k, v in preds.items() if k != "model"},
        clim_base=clim_base, metadata=metadata,
    )
    out = Path(out_dir)
    written = _emit_report(report, out, figures=figures)

    clim = monthly_climatology(truth, clim_base)
    truth_slice = truth.slice_range(*eval_range)
    bins = binned_abs_error(preds, truth_slice, clim)
    bins.save_json(out / "binned.json")
    bins.write_csv(out / "binned.csv")
    written += [out / "binned.json", out / "binned.csv"]
    if figures:
        plots.plot_binned_boxes(bins, out / "binned.png")
        written.append(out / "binned.png")

    inputs = [truth_path, *mask_paths, *member_paths]
    if elevation_path:
        inputs.append(elevation_path)
    _write_manifest(
        out, "evaluate",
        {"checkpoint": str(ckpt_path), "range": range_text,
         "clim_base": clim_base_text or range_text, "persistence": persistence,
         "masks": [str(p) for p in mask_paths], "members": [str(p) for p in member_paths]},
        inputs, None, started, written,
    )
    click.echo(f"overall MAE {report.model.overall_mae:.4f} degC -> {out / 'report.json'}")


@cli.command("baseline")
@click.argument("kind", type=click.Choice(["persistence", "ensemble"]))
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--range", "range_text", required=True)
@click.option("--mask", "mask_paths", type=click.Path(exists=True), multiple=True)
@click.option("--member", "member_paths", type=click.Path(exists=True), multiple=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_baseline(kind, truth_path, range_text, mask_paths, member_paths, figures, out_dir):
    """Score a baseline predictor on its own."""
    started = time.time()
    eval_range = _parse_range(range_text)
    truth = _read_series(truth_path)
    masks = [_read_mask(p) for p in mask_paths]
    if kind == "persistence":
        predictor = lambda stamp: persistence_forecast(truth, truth.index_of(stamp))
    else:
        if not member_paths:
            raise click.UsageError("ensemble baseline needs at least one --member")
        predictor = ensemble_mean([_read_series(p) for p in member_paths])
    report = evaluate(
        predictor, truth, eval_range, masks=masks,
        metadata={"case_id": None, "predictor": kind, "truth": str(truth_path)},
    )
    out = Path(out_dir)
    written = _emit_report(report, out, figures=figures)
    _write_manifest(
        out, f"baseline {kind}",
        {"range": range_text, "masks": [str(p) for p in mask_paths],
         "members": [str(p) for p in member_paths]},
        [truth_path, *mask_paths, *member_paths], None, started, written,
    )
    click.echo(f"{kind} overall MAE {report.model.overall_mae:.4f} degC")


@cli.command("rank")
@click.option("--report", "report_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="Exactly 14 report JSONs, one per temporal case.")
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_rank(report_paths, figures, out_dir):
    """Rank the 14 temporal cases per region and season."""
    started = time.time()
    reports = [EvalReport.load_json(p) for p in report_paths]
    table = rank_cases(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.save_json(out / "rank.json")
    table.write_csv(out / "rank.csv")
    written = [out / "rank.json", out / "rank.csv"]
    if figures:
        plots.plot_rank_matrix(table, out / "rank_matrix.png")
        written.append(out / "rank_matrix.png")
    _write_manifest(out, "rank", {"reports": [str(p) for p in report_paths]},
                    list(report_paths), None, started, written)
    best = min(table.case_ids, key=lambda c: table.ranks["overall"][c])
    click.echo(f"overall rank 1: {best}")


@cli.command("heatmap")
@click.option("--cgt", "cgt_path", type=click.Path(exists=True), default=None)
@click.option("--index", type=int, default=0, show_default=True,
              help="Time index when reading a series file.")
@click.option("--report", "report_path", type=click.Path(exists=True), default=None)
@click.option("--system", default="model", show_default=True,
              help="Which system's MAE field to render from a report.")
@click.option("--min", "vmin", type=float, default=None)
@click.option("--max", "vmax", type=float, default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_heatmap(cgt_path, index, report_path, system, vmin, vmax, figures, out_path):
    """Render a stored field as PGM (plus PNG)."""
    started = time.time()
    if (cgt_path is None) == (report_path is None):
        raise click.UsageError("pass exactly one of --cgt or --report")
    if cgt_path:
        obj = read_cgt(cgt_path)
        if isinstance(obj, GridSeries):
            if not 0 <= index < len(obj):
                raise SeasoncastError(f"index {index} outside series of length {len(obj)}")
            field = obj.values[index]
        elif isinstance(obj, RegionMask):
            field = obj.weights
        else:
            field = obj
        source = cgt_path
    else:
        report = EvalReport.load_json(report_path)
        systems = report.systems()
        if system not in systems:
            raise SeasoncastError(
                f"report has systems {sorted(systems)}, not {system!r}"
            )
        field = systems[system].mae_field
        source = report_path
    value_range = None if vmin is None or vmax is None else (vmin, vmax)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_heatmap(field, out, value_range=value_range)
    written = [out, out.with_name(out.name + ".txt")]
    if figures:
        png = out.with_suffix(".png")
        plots.plot_field(field, png, value_range=value_range)
        written.append(png)
    _write_manifest(out.parent, "heatmap",
                    {"source": str(source), "index": index, "system": system,
                     "min": vmin, "max": vmax},
                    [source], None, started, written)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
