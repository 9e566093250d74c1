import numpy as np

from seasoncast import GridSeries, MonthStamp, evaluate, monthly_climatology, rank_cases
from seasoncast import binned_abs_error
from seasoncast import plots
from seasoncast.stacking import enumerate_cases
from seasoncast.training import TrainHistory

from test_evaluation import M6_MAE_BY_LABEL, single_cell_report

PNG_MAGIC = b"\x89PNG"


def _report(rng):
    truth = GridSeries(
        MonthStamp(2016, 1), rng.normal(10, 5, size=(24, 4, 6)).astype(np.float32)
    )
    preds = GridSeries(truth.start, truth.values + 1.0)
    return evaluate(
        preds,
        truth,
        (MonthStamp(2016, 1), MonthStamp(2017, 12)),
        baselines={"persistence": GridSeries(truth.start, truth.values + 2.0)},
    ), truth


def test_time_series_figure(tmp_path, rng):
    report, _ = _report(rng)
    out = tmp_path / "ts.png"
    plots.plot_mae_time_series(report, out)
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_rank_matrix_figure(tmp_path):
    table = rank_cases(
        [single_cell_report(c.id, M6_MAE_BY_LABEL[c.label]) for c in enumerate_cases()]
    )
    out = tmp_path / "rank.png"
    plots.plot_rank_matrix(table, out)
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_field_figure(tmp_path, rng):
    out = tmp_path / "field.png"
    plots.plot_field(rng.normal(size=(24, 48)), out, title="test")
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_binned_boxes_figure(tmp_path, rng):
    report, truth = _report(rng)
    clim = monthly_climatology(truth)
    stats = binned_abs_error(
        {
            "model": GridSeries(truth.start, truth.values + 1.0),
            "persistence": GridSeries(truth.start, truth.values + 2.0),
        },
        truth,
        clim,
    )
    out = tmp_path / "bins.png"
    plots.plot_binned_boxes(stats, out)
    assert out.read_bytes()[:4] == PNG_MAGIC


def test_training_history_figure(tmp_path):
    history = TrainHistory(
        epochs=[0, 1, 2], learning_rate=[1e-3] * 3,
        train_mse=[1.0, 0.5, 0.2], val_mse=[1.1, 0.6, 0.3],
        best_epoch=2, best_validation_loss=0.3,
    )
    out = tmp_path / "hist.png"
    plots.plot_training_history(history, out)
    assert out.read_bytes()[:4] == PNG_MAGIC
