import json

import numpy as np
import pandas as pd
import pytest

from core.exceptions import CheckpointError, TrainingError
from models.models import build_model, save_checkpoint
from queries.dataset_queries import BatchLoader, load_csv, split
from services.training_services import (
    ABLATIONS,
    PreparedData,
    Trainer,
    cmd_ablate,
    cmd_evaluate,
    cmd_sweep,
    cmd_train,
    with_updates,
)


@pytest.fixture
def data(experiment_config):
    return PreparedData.from_config(experiment_config)


def test_prepared_data_scales_on_train(data, experiment_config):
    assert data.channels == ["load", "temp"]
    assert np.allclose(data.train.values.mean(axis=0), 0.0, atol=1e-12)
    assert len(data.val) == 120 + experiment_config.lookback


def test_zero_lambda_matches_mse_only(experiment_config, data):
    ps = Trainer(with_updates(experiment_config, loss={"lam": 0.0}), data, write_outputs=False)
    mse = Trainer(with_updates(experiment_config, loss={"mode": "mse_only"}), data, write_outputs=False)

    steps, epoch = 0, 0
    while steps < 100:
        epoch += 1
        batches = zip(ps.train_loader.iterate(epoch), mse.train_loader.iterate(epoch))
        for (i, x, y), (j, x2, y2) in batches:
            assert i == j and np.array_equal(x, x2)
            ps.train_step(x, y, epoch, i)
            mse.train_step(x2, y2, epoch, j)
            steps += 1
            if steps == 100:
                break

    for name in ps.model.params:
        assert np.max(np.abs(ps.model.params[name] - mse.model.params[name])) < 1e-12


def test_fit_writes_outputs(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"dump_predictions": True})
    out = tmp_path / "fit"
    result = cmd_train(config, data, out)

    best = [record.best_val_mse for record in result.epochs]
    assert all(later <= earlier for earlier, later in zip(best, best[1:]))
    assert 1 <= result.best_epoch <= len(result.epochs)
    assert result.test is not None and result.test.mse > 0

    stored = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert stored["seed"] == config.seed
    assert stored["config"] == config.echo()

    trace = (out / "weights_trace.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(trace) == len(result.weights_trace) > 0
    assert json.loads(trace[0])["step"] == 1
    assert (out / "checkpoint.json").exists()
    assert "epoch 1" in (out / "train.log").read_text(encoding="utf-8")

    frame = pd.read_csv(out / "predictions.csv")
    test_windows = BatchLoader(data.test, config.lookback, config.horizon, 1).n_windows
    assert len(frame) == test_windows * config.horizon
    assert {"truth_load", "pred_load", "truth_temp", "pred_temp"} <= set(frame.columns)


def test_sinusoid_best_validation_never_increases(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"epochs": 5, "patience": 5})
    result = cmd_train(config, data, tmp_path / "five")
    best = [record.best_val_mse for record in result.epochs]
    assert len(best) == 5
    assert all(later <= earlier for earlier, later in zip(best, best[1:]))


def test_runs_are_deterministic(experiment_config, data, tmp_path):
    first = cmd_train(experiment_config, data, tmp_path / "a")
    second = cmd_train(experiment_config, data, tmp_path / "b")
    assert [e.train_loss for e in first.epochs] == [e.train_loss for e in second.epochs]
    assert first.test == second.test
    assert first.weights_trace == second.weights_trace


def test_evaluate_reproduces_training_metrics(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"eval_shape_metrics": True})
    result = cmd_train(config, data, tmp_path / "run")
    report = cmd_evaluate(result.checkpoint_path, config, data)
    assert report == result.test


def test_zero_checkpoint_scores_target_second_moment(experiment_config, data, tmp_path):
    config = experiment_config
    model = build_model(config.model, config.lookback, config.horizon, 2)
    for name in model.params:
        model.params[name][...] = 0.0
    path = save_checkpoint(model, tmp_path / "zero.json")
    dump = tmp_path / "zero_predictions.csv"

    report = cmd_evaluate(path, config, data, dump_path=dump)
    targets = np.concatenate([y for _, _, y in BatchLoader(data.test, config.lookback, config.horizon, 64).iterate()])
    assert report.mse == pytest.approx(np.mean(targets ** 2))
    assert len(pd.read_csv(dump)) == targets.shape[0] * config.horizon


def test_incompatible_checkpoint_rejected(experiment_config, data, tmp_path):
    model = build_model(experiment_config.model, 48, experiment_config.horizon, 2)
    path = save_checkpoint(model, tmp_path / "other.json")
    with pytest.raises(CheckpointError) as info:
        cmd_evaluate(path, experiment_config, data)
    assert "lookback" in info.value.details


def test_nan_loss_reports_batch(experiment_config, data):
    trainer = Trainer(with_updates(experiment_config, loss={"mode": "mse_only"}), data, write_outputs=False)
    x = np.full((2, 2, experiment_config.lookback), np.nan)
    y = np.zeros((2, 2, experiment_config.horizon))
    with pytest.raises(TrainingError) as info:
        trainer.train_step(x, y, epoch=2, batch_index=7)
    assert info.value.details["batch"] == 7
    assert info.value.exit_code == 5


def test_ablation_table(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"epochs": 1, "log_interval": 1}, output_dir=str(tmp_path / "abl"))
    table, results = cmd_ablate(config, data=data)

    assert list(table["variant"]) == list(ABLATIONS)
    assert len(results) == 6
    assert (tmp_path / "abl" / "ablation.csv").exists()

    by_label = dict(zip(ABLATIONS, results))
    assert all(state.patch_count == 1 for state in by_label["w/o Patching"].weights_trace)
    assert all(state.patch_count > 1 for state in by_label["full"].weights_trace)
    assert all(state.beta == 0.0 for state in by_label["w/o Var"].weights_trace)
    assert all(
        (state.alpha, state.beta, state.gamma) == (1.0, 1.0, 1.0)
        for state in by_label["w/o Weighting"].weights_trace
    )
    # shared seed: identical first-epoch data order means identical first trace step patch plans
    plans = {(r.weights_trace[0].patch_length) for label, r in by_label.items() if label != "w/o Patching"}
    assert len(plans) == 1


def test_lambda_sweep_rows_and_json(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"epochs": 1}, output_dir=str(tmp_path / "sweep"))
    table, _ = cmd_sweep(config, "lambda", [0.1, 1.0], data=data)
    assert len(table) == 2
    assert list(table["value"]) == [0.1, 1.0]

    rows = json.loads((tmp_path / "sweep" / "sweep_lambda.json").read_text(encoding="utf-8"))
    assert [row["value"] for row in rows] == [0.1, 1.0]
    assert rows[0]["test_mse"] == pytest.approx(table["test_mse"][0])


def test_delta_beyond_fourier_bound_changes_nothing(experiment_config, data, tmp_path):
    # a 24-step period inside a 96-step horizon caps patches at 12, below both thresholds
    config = with_updates(experiment_config, training={"epochs": 1}, output_dir=str(tmp_path / "delta"))
    table, results = cmd_sweep(config, "delta", [24, 36], data=data)
    assert table["test_mse"][0] == table["test_mse"][1]
    assert results[0].weights_trace[0].patch_length == 12


def raw_test_targets(config, channel):
    """Unscaled target values in (window, step) order, read straight from the CSV."""
    _, _, raw_test = split(load_csv(config.dataset.path), config.dataset.split, config.lookback)
    loader = BatchLoader(raw_test, config.lookback, config.horizon, 64)
    return np.concatenate([y for _, _, y in loader.iterate()])[:, channel, :].reshape(-1)


def test_original_scale_dump_matches_csv(experiment_config, data, tmp_path):
    config = with_updates(experiment_config, training={"epochs": 1, "dump_predictions": True, "dump_original_scale": True})
    cmd_train(config, data, tmp_path / "orig")
    frame = pd.read_csv(tmp_path / "orig" / "predictions.csv")
    for index, name in enumerate(data.channels):
        assert np.allclose(frame[f"truth_{name}"].to_numpy(), raw_test_targets(config, index), atol=1e-9)
    assert frame["truth_load"].mean() > 3.0


def test_evaluate_dump_scale_follows_flag(experiment_config, data, tmp_path):
    result = cmd_train(with_updates(experiment_config, training={"epochs": 1}), data, tmp_path / "run")
    scaled, original = tmp_path / "scaled.csv", tmp_path / "original.csv"
    cmd_evaluate(result.checkpoint_path, experiment_config, data, dump_path=scaled)
    cmd_evaluate(result.checkpoint_path, experiment_config, data, dump_path=original, original_scale=True)

    expected = raw_test_targets(experiment_config, 0)
    assert np.allclose(pd.read_csv(original)["truth_load"].to_numpy(), expected, atol=1e-9)
    restored = data.scaler.inverse_transform(pd.read_csv(scaled)[["truth_load", "truth_temp"]].to_numpy())
    assert np.allclose(restored[:, 0], expected, atol=1e-9)
