from pathlib import Path
from typing import List, Optional

import click

from core.config import load_experiment_config, settings
from core.exceptions import ConfigError
from services.training_services import cmd_ablate, cmd_evaluate, cmd_sweep, cmd_train
from utils.encoders import dumps
from utils.log import setup_logger
from utils.response import success_response

logger = setup_logger(__name__)


def emit(data, message: Optional[str] = None) -> None:
    click.echo(dumps(success_response(data, message)))


def parse_values(raw: str) -> List[float]:
    try:
        return [float(item) for item in raw.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be a comma separated list of numbers, got {raw!r}") from e


config_option = click.option(
    "--config", "config_path", required=True, type=click.Path(path_type=Path), help="Experiment config (.toml or .json)"
)
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed")
out_option = click.option("--out", "output_dir", type=str, default=None, help="Override the output directory")


@click.group(name="psloss")
def router():
    """Train and evaluate forecasters with the patch-wise structural loss."""


#
# Training
#
@router.command("train")
@config_option
@seed_option
@out_option
def train(config_path: Path, seed: Optional[int], output_dir: Optional[str]):
    """Train one model and write result.json, the weight trace and a checkpoint."""
    config = load_experiment_config(config_path, seed=seed, output_dir=output_dir)
    result = cmd_train(config)
    emit({
        "output_dir": str(settings.resolve_output(config)),
        "checkpoint": result.checkpoint_path,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.epochs),
        "mean_epoch_seconds": result.mean_epoch_seconds,
        "test": result.test.model_dump() if result.test else None,
    }, f"Training '{config.name}' finished")


#
# Evaluation
#
@router.command("evaluate")
@config_option
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path), help="Checkpoint written by train")
@click.option("--dump", "dump_path", type=click.Path(path_type=Path), default=None, help="Write predictions CSV here")
@click.option("--original-scale", is_flag=True, default=False, help="Undo the z-score scaling in the dumped CSV")
@seed_option
@out_option
def evaluate(config_path: Path, checkpoint: Path, dump_path: Optional[Path], original_scale: bool, seed: Optional[int], output_dir: Optional[str]):
    """Score a checkpoint on the test split of the configured dataset."""
    config = load_experiment_config(config_path, seed=seed, output_dir=output_dir)
    report = cmd_evaluate(checkpoint, config, dump_path=dump_path, original_scale=original_scale or None)
    emit(report.model_dump(), f"Evaluated {checkpoint}")


#
# Experiments
#
@router.command("ablate")
@config_option
@seed_option
@out_option
@click.option("--with-baseline", is_flag=True, default=False, help="Also train an MSE-only run for comparison")
def ablate(config_path: Path, seed: Optional[int], output_dir: Optional[str], with_baseline: bool):
    """Full PS loss against the five single-component ablations."""
    config = load_experiment_config(config_path, seed=seed, output_dir=output_dir)
    table, _ = cmd_ablate(config, with_baseline=with_baseline)
    emit(table.to_dict(orient="records"), f"Ablation of '{config.name}' finished")


@router.command("sweep")
@config_option
@click.option("--param", type=click.Choice(["lambda", "delta"]), required=True)
@click.option("--values", "raw_values", required=True, help="Comma separated values, e.g. 0.1,1,3")
@seed_option
@out_option
def sweep(config_path: Path, param: str, raw_values: str, seed: Optional[int], output_dir: Optional[str]):
    """One run per value of lambda or delta."""
    config = load_experiment_config(config_path, seed=seed, output_dir=output_dir)
    table, _ = cmd_sweep(config, param, parse_values(raw_values))
    emit(table.to_dict(orient="records"), f"Sweep over {param} finished")
