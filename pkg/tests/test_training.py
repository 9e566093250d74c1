import numpy as np
import pytest

from seasoncast import (
    GridSeries,
    ModelConfig,
    MonthStamp,
    SampleSet,
    build_model,
    build_samples,
    case_by_id,
    compute_norm_stats,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from seasoncast.errors import (
    ConfigurationError,
    DivergenceError,
    InsufficientHistoryError,
    ValidationError,
)
from seasoncast.training import EarlyStopper, TrainConfig, finetune, train


@pytest.fixture
def setup(rng):
    """A tiny seasonal world plus train/val sample sets for seq-6."""
    n = 48
    months = np.arange(n)
    cycle = 5.0 * np.cos(2 * np.pi * (months % 12) / 12.0)
    values = (10.0 + cycle[:, None, None] + rng.normal(0, 0.3, size=(n, 8, 8))).astype(
        np.float32
    )
    series = GridSeries(MonthStamp(2000, 1), values)
    norm = compute_norm_stats([series])
    case = case_by_id("seq-6")
    sset = build_samples(series, case, norm)
    train_set = SampleSet(case, False, sset.samples[:32])
    val_set = SampleSet(case, False, sset.samples[32:])
    mcfg = ModelConfig(
        arch="unet", in_channels=6, case_id="seq-6", norm_stats=norm, base_width=4
    )
    return series, norm, case, train_set, val_set, mcfg


def _tcfg(**kw):
    base = dict(
        learning_rate=1e-3, weight_decay=0.0, epochs=4, batch_size=8,
        early_stop_patience=None, seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestEarlyStopper:
    def test_constructed_curve(self):
        # values 1.0, 0.5, 0.6, 0.7 with patience 2: stop after the 4th
        # epoch and keep epoch 2
        stopper = EarlyStopper(patience=2)
        decisions = [stopper.update(e, v) for e, v in
                     enumerate([1.0, 0.5, 0.6, 0.7, 0.8], start=1)]
        assert decisions[:3] == [False, False, False]
        assert decisions[3] is True
        assert stopper.best_index == 2

    def test_disabled(self):
        stopper = EarlyStopper(patience=None)
        assert not any(stopper.update(e, 1.0 + e) for e in range(1, 20))

    def test_improvement_resets_counter(self):
        stopper = EarlyStopper(patience=3)
        for e, v in enumerate([1.0, 0.9, 0.95, 0.8, 0.85, 0.88], start=1):
            assert stopper.update(e, v) is False
        assert stopper.best_index == 4


class TestTrain:
    def test_zero_epochs_keeps_initial_parameters(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        before = [p.data.copy() for p in model.parameters()]
        history = train(model, train_set, val_set, _tcfg(epochs=0))
        for p, b in zip(model.parameters(), before):
            assert np.array_equal(p.data, b)
        assert history.epochs == [0]
        assert history.best_epoch == 0

    def test_learning_happens_in_first_epoch(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        history = train(model, train_set, val_set, _tcfg(epochs=1))
        assert history.train_mse[1] < history.train_mse[0]

    def test_scheduler_exact(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        cfg = _tcfg(epochs=5, scheduler_step_epochs=2, scheduler_factor=0.5)
        history = train(model, train_set, val_set, cfg)
        for e, lr in zip(history.epochs[1:], history.learning_rate[1:]):
            assert lr == cfg.learning_rate * 0.5 ** ((e - 1) // 2)

    def test_fixed_seed_bitwise_reproducible(self, setup):
        _, _, _, train_set, val_set, mcfg = setup

        def run():
            model = build_model(mcfg, seed=3)
            history = train(model, train_set, val_set, _tcfg(epochs=3, shuffle=True))
            return history, model.get_state()

        h1, s1 = run()
        h2, s2 = run()
        assert h1.train_mse == h2.train_mse
        assert h1.val_mse == h2.val_mse
        assert set(s1) == set(s2)
        for k in s1:
            assert np.array_equal(s1[k], s2[k])

    def test_best_validation_loss_reproducible(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        history = train(model, train_set, val_set, _tcfg(epochs=3))
        from seasoncast.training import _batch_mse, _normalized_targets

        re_eval = _batch_mse(
            model, val_set.inputs(), _normalized_targets(val_set, model), 8
        )
        assert re_eval == pytest.approx(history.best_validation_loss, abs=1e-6)

    def test_divergence_names_epoch(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        with np.errstate(all="ignore"):
            with pytest.raises(DivergenceError, match="epoch"):
                train(model, train_set, val_set, _tcfg(learning_rate=1e12, epochs=3))

    def test_patience_cannot_exceed_epochs(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=3, early_stop_patience=5).validate()

    def test_log_lines_emitted(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        lines = []
        train(model, train_set, val_set, _tcfg(epochs=2), log=lines.append)
        assert len(lines) == 3  # epoch 0 plus two training epochs
        assert all("train_mse=" in ln and "val_mse=" in ln for ln in lines)

    def test_history_best_is_minimum(self, setup):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        history = train(model, train_set, val_set, _tcfg(epochs=4))
        assert history.best_validation_loss == min(history.val_mse)
        assert history.val_mse[history.best_epoch] == history.best_validation_loss


class TestFinetune:
    def test_zero_epochs_is_identity(self, setup, tmp_path):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        train(model, train_set, val_set, _tcfg(epochs=2))
        save_checkpoint(model, tmp_path / "ck")
        restored, _ = load_checkpoint(tmp_path / "ck")
        finetune(restored, train_set, val_set, _tcfg(epochs=0))
        for a, b in zip(restored.parameters(), model.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_on_pretraining_data_never_worse(self, setup, tmp_path):
        _, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        pre = train(model, train_set, val_set, _tcfg(epochs=3))
        save_checkpoint(model, tmp_path / "ck")
        restored, _ = load_checkpoint(tmp_path / "ck")
        post = finetune(restored, train_set, val_set, _tcfg(epochs=2))
        assert post.best_validation_loss <= pre.best_validation_loss + 1e-6

    def test_case_mismatch_rejected(self, setup, rng):
        series, norm, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        other = build_samples(series, case_by_id("y1m1"), norm)
        with pytest.raises(ConfigurationError):
            finetune(model, other, other, _tcfg(epochs=1))


class TestPredict:
    def test_deterministic_and_shaped(self, setup):
        series, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        train(model, train_set, val_set, _tcfg(epochs=1))
        stamp = series.stamp_at(20)
        a = predict(model, series, None, stamp)
        b = predict(model, series, None, stamp)
        assert a.shape == (series.n_lat, series.n_lon)
        assert np.array_equal(a, b)

    def test_insufficient_history(self, setup):
        series, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        train(model, train_set, val_set, _tcfg(epochs=1))
        with pytest.raises(InsufficientHistoryError):
            predict(model, series, None, series.stamp_at(3))

    def test_prediction_in_degrees(self, setup):
        # an in-distribution forecast should land near the data's value range
        series, _, _, train_set, val_set, mcfg = setup
        model = build_model(mcfg, seed=0)
        train(model, train_set, val_set, _tcfg(epochs=8))
        out = predict(model, series, None, series.stamp_at(40))
        assert 0.0 < out.mean() < 20.0
