"""Shared fixtures: seeded generators, finite differences, synthetic datasets."""
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from core.config import build_experiment_config

DATA_ROOT = Path(os.getenv("PSLOSS_DATA_ROOT", "./dataset"))
ETTH1 = DATA_ROOT / "ETTh1.csv"


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[index] += h
        down[index] -= h
        out[index] = (f(up) - f(down)) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def write_series_csv(path: Path, rows: int = 1200, seed: int = 0) -> Path:
    """Hourly two-channel series with a 24-step period plus a little noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(rows)
    frame = pd.DataFrame({
        "date": pd.date_range("2016-07-01", periods=rows, freq="h").strftime("%Y-%m-%d %H:%M:%S"),
        "load": 2.0 * np.sin(2 * np.pi * t / 24) + 0.1 * rng.standard_normal(rows) + 5.0,
        "temp": np.cos(2 * np.pi * t / 24) + 0.1 * rng.standard_normal(rows),
    })
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def numeric_grad():
    return central_difference


@pytest.fixture
def rel_err():
    return relative_error


@pytest.fixture
def series_csv(tmp_path) -> Path:
    return write_series_csv(tmp_path / "synthetic.csv")


@pytest.fixture
def experiment_document(series_csv, tmp_path) -> dict:
    return {
        "name": "synthetic",
        "lookback": 24,
        "horizon": 96,
        "seed": 7,
        "dataset": {"path": str(series_csv), "split": {"mode": "ratio"}},
        "model": {"name": "dlinear", "kernel_size": 5},
        "loss": {"mode": "mse_plus_ps", "lambda": 1.0, "delta": 48},
        "optimizer": {"learning_rate": 0.005, "batch_size": 32},
        "training": {
            "epochs": 2,
            "patience": 3,
            "log_interval": 5,
            "prefetch": False,
            "eval_shape_metrics": False,
        },
        "output_dir": str(tmp_path / "run"),
    }


@pytest.fixture
def experiment_config(experiment_document):
    return build_experiment_config(experiment_document)


@pytest.fixture
def etth1_path() -> Path:
    if not ETTH1.exists():
        pytest.skip(f"ETTh1.csv not found under {DATA_ROOT}")
    return ETTH1
