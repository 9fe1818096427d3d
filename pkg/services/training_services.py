"""Experiment runner: training with MSE (+ PS loss), evaluation, ablations and sweeps."""
import json
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.autograd import Tape, Tensor, backward
from core.config import build_experiment_config, settings
from core.exceptions import CheckpointError, ConfigError, TrainingError
from models.models import Forecaster, build_model, load_checkpoint, save_checkpoint
from models.optimizer import Adam
from queries.dataset_queries import BatchLoader, DatasetView, RawDataset, Scaler, load_csv, split
from schemas.schema import EpochRecord, ExperimentConfig, MetricsReport, RunResult, TotalLossConfig, WeightState
from services.loss_services import component_losses, mse_loss, ps_loss
from services.metrics_services import evaluate
from services.patching_services import full_series_plan, plan_for_batch, segment
from services.weighting_services import DynamicWeighting, total_loss
from utils.encoders import NumpyEncoder
from utils.log import attach_run_log, detach_run_log, setup_logger

logger = setup_logger(__name__)

EVAL_BATCH = 256

ABLATION_FLAGS = ("no_corr", "no_var", "no_mean", "no_patching", "no_weighting")
ABLATIONS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "w/o Corr": {"no_corr": True},
    "w/o Var": {"no_var": True},
    "w/o Mean": {"no_mean": True},
    "w/o Patching": {"no_patching": True},
    "w/o Weighting": {"no_weighting": True},
}


class PreparedData:
    """Scaled train/val/test views of one dataset plus the scaler fitted on train."""

    def __init__(self, dataset: RawDataset, config: ExperimentConfig):
        train, val, test = split(dataset, config.dataset.split, config.lookback)
        self.scaler = Scaler().fit(train)
        self.train = self.scaler.transform_view(train)
        self.val = self.scaler.transform_view(val)
        self.test = self.scaler.transform_view(test)
        self.channels = dataset.channels
        for view in (self.train, self.val, self.test):
            if len(view) < config.lookback + config.horizon:
                raise ConfigError(
                    f"{view.name} split has {len(view)} rows, fewer than L+T={config.lookback + config.horizon}"
                )

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "PreparedData":
        return cls(load_csv(settings.resolve_dataset(config.dataset.path)), config)


def with_updates(config: ExperimentConfig, **sections: Dict[str, Any]) -> ExperimentConfig:
    """Re-validated copy of ``config`` with nested sections (or top-level fields) updated."""
    document = config.model_dump()
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key] = {**document[key], **value}
        else:
            document[key] = value
    return build_experiment_config(document)


def predict(model: Forecaster, view: DatasetView, lookback: int, horizon: int, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """(truth, prediction) over every window of a view, each (W, C, T)."""
    loader = BatchLoader(view, lookback, horizon, EVAL_BATCH, stride=stride)
    truths, preds = [], []
    for _, x, y in loader.iterate():
        truths.append(y)
        preds.append(model.forward(Tensor(x)).data)
    if not truths:
        channels = view.n_channels
        return np.zeros((0, channels, horizon)), np.zeros((0, channels, horizon))
    return np.concatenate(truths), np.concatenate(preds)


def dump_predictions(truth: np.ndarray, pred: np.ndarray, channels: List[str], path: Path, scaler: Optional[Scaler] = None) -> Path:
    """One row per (window, step) with truth and prediction per channel."""
    windows, n_channels, horizon = truth.shape
    flat_truth = np.transpose(truth, (0, 2, 1)).reshape(-1, n_channels)
    flat_pred = np.transpose(pred, (0, 2, 1)).reshape(-1, n_channels)
    if scaler is not None:
        flat_truth = scaler.inverse_transform(flat_truth)
        flat_pred = scaler.inverse_transform(flat_pred)
    frame = pd.DataFrame({
        "window": np.repeat(np.arange(windows), horizon),
        "step": np.tile(np.arange(horizon), windows),
    })
    for index, name in enumerate(channels):
        frame[f"truth_{name}"] = flat_truth[:, index]
        frame[f"pred_{name}"] = flat_pred[:, index]
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} prediction rows to {path}")
    return path


class Trainer:
    """One training run: forward, MSE (+ weighted PS loss), backward, Adam step."""

    def __init__(
        self,
        config: ExperimentConfig,
        data: Optional[PreparedData] = None,
        output_dir: Optional[Path] = None,
        write_outputs: bool = True,
    ):
        self.config = config
        self.data = data or PreparedData.from_config(config)
        self.output_dir = Path(output_dir) if output_dir else settings.resolve_output(config)
        self.write_outputs = write_outputs

        self.model = build_model(
            config.model, config.lookback, config.horizon, len(self.data.channels), seed=config.seed
        )
        self.optimizer = Adam.from_config(config.optimizer)
        ablation = config.ablation
        self.active = (not ablation.no_corr, not ablation.no_var, not ablation.no_mean)
        self.weighting = DynamicWeighting(
            TotalLossConfig(
                lam=config.loss.lam,
                gdw_enabled=not ablation.no_weighting,
                fixed_weights=(1.0, 1.0, 1.0) if ablation.no_weighting else None,
            ),
            eps=config.loss.weight_eps,
            scope=config.loss.scale_scope,
            active=self.active,
        )
        self.train_loader = BatchLoader(
            self.data.train,
            config.lookback,
            config.horizon,
            config.optimizer.batch_size,
            stride=config.dataset.window_stride,
            shuffle=True,
            seed=config.seed,
            prefetch=config.training.prefetch,
        )
        self.global_step = 0
        self.trace: List[WeightState] = []

    def train_step(self, x: np.ndarray, y: np.ndarray, epoch: int = 0, batch_index: int = 0) -> Tuple[float, float, Optional[WeightState]]:
        config = self.config
        tape = Tape()
        bound = self.model.attach(tape)
        pred = self.model.forward(Tensor(x), bound)
        truth = Tensor(y)
        l_mse = mse_loss(truth, pred)
        loss, state = l_mse, None

        if config.ps_enabled:
            if config.ablation.no_patching:
                plan = full_series_plan(config.horizon)
            else:
                plan = plan_for_batch(y, config.loss.delta)
            components = component_losses(
                segment(truth, plan), segment(pred, plan), config.loss.corr_eps, self.active
            )
            state = self.weighting.weigh(
                truth, pred, components, self.model.output_params(bound), plan, epoch
            )
            l_ps = ps_loss(*components, state.alpha, state.beta, state.gamma)
            loss = total_loss(l_mse, l_ps, config.loss.lam)

        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(
                f"Non-finite loss at epoch {epoch}, batch {batch_index}",
                {"epoch": epoch, "batch": batch_index, "mse": l_mse.item()},
            )
        grads = backward(loss, bound.values())
        try:
            self.optimizer.step(self.model.params, {name: grads[t.node_id].data for name, t in bound.items()})
        except TrainingError as e:
            e.details.update({"epoch": epoch, "batch": batch_index})
            raise
        self.global_step += 1
        return value, l_mse.item(), state

    def evaluate_view(self, view: DatasetView, shape_metrics: bool = False) -> MetricsReport:
        truth, pred = predict(self.model, view, self.config.lookback, self.config.horizon, self.config.dataset.window_stride)
        return evaluate(truth, pred, shape_metrics=shape_metrics)

    def _record(self, state: WeightState, trace_file) -> None:
        self.trace.append(state)
        if trace_file is not None:
            trace_file.write(state.model_dump_json() + "\n")
        logger.info(
            f"step {state.step} | P={state.patch_length} N={state.patch_count} | "
            f"alpha={state.alpha:.4f} beta={state.beta:.4f} gamma={state.gamma:.4f} | c={state.c:.4f} v={state.v:.4f}"
        )

    def fit(self) -> RunResult:
        handler = attach_run_log(self.output_dir) if self.write_outputs else None
        trace_file = None
        if self.write_outputs:
            trace_file = (self.output_dir / "weights_trace.jsonl").open("w", encoding="utf-8")
        try:
            return self._fit(trace_file)
        finally:
            if trace_file is not None:
                trace_file.close()
            if handler is not None:
                detach_run_log(handler)

    def _fit(self, trace_file) -> RunResult:
        config = self.config
        logger.info(
            f"Training '{config.name}': {config.model.name} L={config.lookback} T={config.horizon} "
            f"loss={config.loss.mode} lambda={config.loss.lam} delta={config.loss.delta} seed={config.seed}"
        )
        best_val, best_epoch, stale = np.inf, 0, 0
        best_state = self.model.state_dict()
        records: List[EpochRecord] = []

        for epoch in range(1, config.training.epochs + 1):
            started = time.perf_counter()
            losses, mses = [], []
            for batch_index, x, y in self.train_loader.iterate(epoch):
                value, mse, state = self.train_step(x, y, epoch, batch_index)
                losses.append(value)
                mses.append(mse)
                if state is not None and (self.global_step - 1) % config.training.log_interval == 0:
                    self._record(state, trace_file)
            seconds = time.perf_counter() - started

            val_mse = self.evaluate_view(self.data.val).mse
            if val_mse < best_val:
                best_val, best_epoch, stale = val_mse, epoch, 0
                best_state = self.model.state_dict()
            else:
                stale += 1
            records.append(EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                train_mse=float(np.mean(mses)),
                val_mse=val_mse,
                best_val_mse=best_val,
                seconds=seconds,
            ))
            logger.success(
                f"epoch {epoch} | train loss {records[-1].train_loss:.5f} | val mse {val_mse:.5f} | {seconds:.2f}s"
            )
            if stale >= config.training.patience:
                logger.warn_custom(f"Early stopping after epoch {epoch}; best epoch {best_epoch}")
                break

        self.model.load_state_dict(best_state)
        logger.success(f"Restored best checkpoint from epoch {best_epoch} (val mse {best_val:.5f})")

        truth, pred = predict(self.model, self.data.test, config.lookback, config.horizon, config.dataset.window_stride)
        test = evaluate(truth, pred, shape_metrics=config.training.eval_shape_metrics)
        result = RunResult(
            name=config.name,
            seed=config.seed,
            config=config.echo(),
            epochs=records,
            best_epoch=best_epoch,
            test=test,
            weights_trace=self.trace,
            mean_epoch_seconds=float(np.mean([r.seconds for r in records])),
        )
        if self.write_outputs:
            result.checkpoint_path = str(save_checkpoint(self.model, self.output_dir / "checkpoint.json"))
            if config.training.dump_predictions:
                scaler = self.data.scaler if config.training.dump_original_scale else None
                dump_predictions(truth, pred, self.data.channels, self.output_dir / "predictions.csv", scaler)
            (self.output_dir / "result.json").write_text(result.model_dump_json(indent=2), encoding="utf-8")
        logger.success(f"Test mse {test.mse:.5f} mae {test.mae:.5f}")
        return result


def cmd_train(config: ExperimentConfig, data: Optional[PreparedData] = None, output_dir: Optional[Path] = None) -> RunResult:
    return Trainer(config, data, output_dir).fit()


def check_compatible(model: Forecaster, config: ExperimentConfig, channels: int) -> None:
    expected = {
        "model": (model.name, config.model.name),
        "lookback": (model.lookback, config.lookback),
        "horizon": (model.horizon, config.horizon),
    }
    if model.individual:
        expected["channels"] = (model.channels, channels)
    mismatched = {k: {"checkpoint": a, "config": b} for k, (a, b) in expected.items() if a != b}
    if mismatched:
        raise CheckpointError("Checkpoint does not match the experiment config", mismatched)


def cmd_evaluate(
    checkpoint: Path,
    config: ExperimentConfig,
    data: Optional[PreparedData] = None,
    dump_path: Optional[Path] = None,
    original_scale: Optional[bool] = None,
) -> MetricsReport:
    data = data or PreparedData.from_config(config)
    model = load_checkpoint(checkpoint)
    check_compatible(model, config, len(data.channels))
    truth, pred = predict(model, data.test, config.lookback, config.horizon, config.dataset.window_stride)
    report = evaluate(truth, pred, shape_metrics=config.training.eval_shape_metrics)
    if dump_path is not None:
        if original_scale is None:
            original_scale = config.training.dump_original_scale
        dump_predictions(truth, pred, data.channels, Path(dump_path), data.scaler if original_scale else None)
    logger.success(f"Evaluated {checkpoint}: mse {report.mse:.5f} mae {report.mae:.5f}")
    return report


def _row(label: str, result: RunResult, **extra) -> Dict[str, Any]:
    test = result.test
    return {
        **extra,
        "variant": label,
        "test_mse": test.mse,
        "test_mae": test.mae,
        "dtw": test.dtw_mean,
        "tdi": test.tdi_mean,
        "pcc": test.pcc_mean,
        "best_epoch": result.best_epoch,
        "epoch_seconds": result.mean_epoch_seconds,
    }


def _slug(label: str) -> str:
    return label.lower().replace("w/o ", "no_").replace(" ", "_")


def _write_table(rows: List[Dict[str, Any]], output_dir: Path, stem: str) -> pd.DataFrame:
    table = pd.DataFrame(rows)
    output_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_dir / f"{stem}.csv", index=False)
    (output_dir / f"{stem}.json").write_text(json.dumps(rows, cls=NumpyEncoder, indent=2), encoding="utf-8")
    return table


def cmd_ablate(config: ExperimentConfig, with_baseline: bool = False, data: Optional[PreparedData] = None) -> Tuple[pd.DataFrame, List[RunResult]]:
    """Full PS loss against each single-component ablation, all under one seed."""
    data = data or PreparedData.from_config(config)
    root = settings.resolve_output(config)
    cleared = {flag: False for flag in ABLATION_FLAGS}
    rows, results = [], []
    for label, flags in ABLATIONS.items():
        variant = with_updates(config, loss={"mode": "mse_plus_ps"}, ablation={**cleared, **flags})
        logger.info(f"Ablation variant '{label}'")
        result = cmd_train(variant, data, root / _slug(label))
        rows.append(_row(label, result))
        results.append(result)
    if with_baseline:
        baseline = with_updates(config, loss={"mode": "mse_only"})
        result = cmd_train(baseline, data, root / "mse_only")
        rows.append(_row("MSE only", result))
        results.append(result)
    return _write_table(rows, root, "ablation"), results


def cmd_sweep(config: ExperimentConfig, param: str, values: Iterable[float], data: Optional[PreparedData] = None) -> Tuple[pd.DataFrame, List[RunResult]]:
    """One run per value of lambda or delta, sharing the seed and data order."""
    if param not in ("lambda", "delta"):
        raise ConfigError(f"sweep parameter must be 'lambda' or 'delta', got {param!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    data = data or PreparedData.from_config(config)
    root = settings.resolve_output(config)
    rows, results = [], []
    for value in values:
        value = float(value) if param == "lambda" else int(value)
        update = {"lam": value} if param == "lambda" else {"delta": value}
        variant = with_updates(config, loss={"mode": "mse_plus_ps", **update})
        label = f"{param}={value}"
        logger.info(f"Sweep run {label}")
        result = cmd_train(variant, data, root / f"{param}_{value}")
        rows.append(_row(label, result, param=param, value=value))
        results.append(result)
    return _write_table(rows, root, f"sweep_{param}"), results
