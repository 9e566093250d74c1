"""Figure rendering for reports: per-region MAE time series, rank matrices,
error-field maps, and anomaly-binned box summaries.

Everything renders through the Agg backend straight to files; these sit next
to the JSON/CSV outputs so a run directory is self-describing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import row_latitudes


def _save(fig, path):
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_mae_time_series(report, path):
    """One panel per region, one line per system (model + baselines)."""
    regions = list(report.model.mae_time_series)
    ncols = 2
    nrows = (len(regions) + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(11, 3.0 * nrows), sharex=True, squeeze=False
    )
    x = np.arange(len(report.months))
    labels = [str(m) for m in report.months]
    step = max(1, len(labels) // 8)
    for i, region in enumerate(regions):
        ax = axes[i // ncols][i % ncols]
        for name, scores in report.systems().items():
            ax.plot(x, scores.mae_time_series[region], label=name, linewidth=1.2)
        ax.set_title(region)
        ax.set_ylabel("MAE (degC)")
        ax.set_xticks(x[::step])
        ax.set_xticklabels(labels[::step], rotation=45, ha="right", fontsize=7)
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=8)
    for j in range(len(regions), nrows * ncols):
        axes[j // ncols][j % ncols].set_visible(False)
    _save(fig, path)


def plot_rank_matrix(table, path):
    """Annotated rank heatmap: rows are cases, columns region/season cells."""
    mat = np.array(
        [[table.ranks[col][cid] for col in table.columns] for cid in table.case_ids]
    )
    fig, ax = plt.subplots(figsize=(1.0 + 0.62 * len(table.columns), 0.42 * len(table.case_ids) + 1.2))
    im = ax.imshow(mat, cmap="RdYlGn_r", aspect="auto", vmin=1, vmax=mat.max())
    ax.set_xticks(range(len(table.columns)))
    ax.set_xticklabels(table.columns, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(table.case_ids)))
    ax.set_yticklabels(table.case_ids, fontsize=8)
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            ax.text(j, i, str(mat[i, j]), ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="rank (1 = lowest MAE)")
    _save(fig, path)


def plot_field(field, path, title="", units="degC", value_range=None):
    """Latitude/longitude map of a single field, north up."""
    arr = np.asarray(field, dtype=np.float64)
    lats = row_latitudes(arr.shape[0])
    lo, hi = value_range if value_range is not None else (arr.min(), arr.max())
    fig, ax = plt.subplots(figsize=(8, 4))
    im = ax.imshow(
        arr[::-1],
        extent=(0, 360, lats[0], lats[-1] + 180.0 / arr.shape[0]),
        vmin=lo,
        vmax=hi,
        cmap="viridis",
        aspect="auto",
    )
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label=units)
    _save(fig, path)


def plot_binned_boxes(stats, path):
    """Median and quartile whiskers per anomaly bin, side by side per system."""
    n_bins = len(stats.counts)
    centers = [(stats.edges[i] + stats.edges[i + 1]) / 2 for i in range(n_bins)]
    names = list(stats.systems)
    width = (stats.edges[1] - stats.edges[0]) * 0.8 / max(1, len(names))
    fig, ax = plt.subplots(figsize=(10, 4))
    for k, name in enumerate(names):
        st = stats.systems[name]
        xs, med, lo_err, hi_err = [], [], [], []
        for i in range(n_bins):
            if st["median"][i] is None:
                continue
            xs.append(centers[i] + (k - (len(names) - 1) / 2) * width)
            med.append(st["median"][i])
            lo_err.append(st["median"][i] - st["q25"][i])
            hi_err.append(st["q75"][i] - st["median"][i])
        ax.errorbar(
            xs, med, yerr=[lo_err, hi_err], fmt="o", capsize=3, markersize=4, label=name
        )
    ax.set_xlabel("temperature anomaly bin center (degC)")
    ax.set_ylabel("absolute error (degC)")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_training_history(history, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(history.epochs, history.train_mse, label="train MSE", marker="o", markersize=3)
    ax.plot(history.epochs, history.val_mse, label="validation MSE", marker="o", markersize=3)
    ax.axvline(history.best_epoch, color="gray", linestyle=":", label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized)")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)
