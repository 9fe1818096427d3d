"""Channel-independent linear forecasters and their checkpoint container."""
import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from core.autograd import Tape, Tensor, as_tensor, matmul
from core.exceptions import CheckpointError, ConfigError, ShapeError
from schemas.schema import CheckpointSchema, ModelConfig
from utils.log import setup_logger

logger = setup_logger(__name__)


def moving_average_matrix(length: int, kernel_size: int) -> np.ndarray:
    """(L, L) operator of a centered moving average with replicate padding."""
    half = (kernel_size - 1) // 2
    matrix = np.zeros((length, length))
    for t in range(length):
        for j in range(-half, half + 1):
            matrix[t, min(max(t + j, 0), length - 1)] += 1.0 / kernel_size
    return matrix


def _check_kernel(kernel_size: int, length: int) -> None:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if kernel_size > 2 * length - 1:
        raise ConfigError(f"kernel_size {kernel_size} exceeds 2L-1 for L={length}")


def decompose(x, kernel_size: int, operator: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Split a (B, C, L) series into (trend, seasonal) with trend + seasonal == x."""
    x = as_tensor(x)
    length = x.shape[-1]
    _check_kernel(kernel_size, length)
    if operator is None:
        operator = moving_average_matrix(length, kernel_size)
    trend = matmul(x, Tensor(operator.T))
    return trend, x - trend


class Forecaster:
    """Base for the linear backbones: numpy parameters, re-attached to a fresh tape each step."""

    name = "base"
    output_layer: Tuple[str, ...] = ()

    def __init__(self, lookback: int, horizon: int, channels: int, individual: bool = False, seed: int = 0):
        self.lookback = lookback
        self.horizon = horizon
        self.channels = channels
        self.individual = individual
        self.kernel_size = 1
        self.rng = np.random.default_rng(seed)
        self.params: Dict[str, np.ndarray] = {}

    def _head(self, prefix: str) -> None:
        bound = 1.0 / np.sqrt(self.lookback)
        if self.individual:
            w_shape, b_shape = (self.channels, self.lookback, self.horizon), (self.channels, self.horizon)
        else:
            w_shape, b_shape = (self.lookback, self.horizon), (self.horizon,)
        self.params[f"{prefix}_weight"] = self.rng.uniform(-bound, bound, size=w_shape)
        self.params[f"{prefix}_bias"] = self.rng.uniform(-bound, bound, size=b_shape)

    def attach(self, tape: Tape) -> Dict[str, Tensor]:
        return {name: tape.variable(value) for name, value in self.params.items()}

    def constants(self) -> Dict[str, Tensor]:
        return {name: Tensor(value) for name, value in self.params.items()}

    def output_params(self, bound: Dict[str, Tensor]):
        return [bound[name] for name in self.output_layer]

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[-1] != self.lookback:
            raise ShapeError(f"{self.name} expects (B, C, {self.lookback}) input, got {x.shape}")
        if self.individual and x.shape[1] != self.channels:
            raise ShapeError(f"{self.name} was built for {self.channels} channels, got {x.shape[1]}")

    def _project(self, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        if self.individual:
            b, c, length = x.shape
            out = matmul(x.reshape(b, c, 1, length), weight).reshape(b, c, self.horizon)
        else:
            out = matmul(x, weight)
        return out + bias

    def forward(self, x, params: Optional[Dict[str, Tensor]] = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, params: Optional[Dict[str, Tensor]] = None) -> Tensor:
        return self.forward(x, params)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise CheckpointError(
                f"{self.name} parameters {sorted(self.params)} do not match {sorted(state)}"
            )
        for name, value in state.items():
            if name not in self.params or self.params[name].shape != value.shape:
                raise CheckpointError(f"parameter {name} does not fit this {self.name} model")
            self.params[name] = np.array(value, dtype=np.float64)

    def to_checkpoint(self) -> CheckpointSchema:
        return CheckpointSchema(
            model=self.name,
            lookback=self.lookback,
            horizon=self.horizon,
            channels=self.channels,
            kernel_size=self.kernel_size,
            individual=self.individual,
            shapes={name: list(value.shape) for name, value in self.params.items()},
            params={name: value.reshape(-1).tolist() for name, value in self.params.items()},
        )


class LinearModel(Forecaster):
    """One linear map from the lookback window to the horizon, per channel."""

    name = "linear"
    output_layer = ("linear_weight",)

    def __init__(self, lookback: int, horizon: int, channels: int, individual: bool = False, seed: int = 0):
        super().__init__(lookback, horizon, channels, individual, seed)
        self._head("linear")

    def forward(self, x, params=None):
        x = as_tensor(x)
        self._check_input(x)
        p = params if params is not None else self.constants()
        return self._project(x, p["linear_weight"], p["linear_bias"])


class DLinearModel(Forecaster):
    """Moving-average trend/seasonal decomposition followed by two linear heads."""

    name = "dlinear"
    output_layer = ("trend_weight", "seasonal_weight")

    def __init__(
        self,
        lookback: int,
        horizon: int,
        channels: int,
        kernel_size: int = 25,
        individual: bool = False,
        seed: int = 0,
    ):
        _check_kernel(kernel_size, lookback)
        super().__init__(lookback, horizon, channels, individual, seed)
        self.kernel_size = kernel_size
        self.operator = moving_average_matrix(lookback, kernel_size)
        self._head("trend")
        self._head("seasonal")

    def forward(self, x, params=None):
        x = as_tensor(x)
        self._check_input(x)
        p = params if params is not None else self.constants()
        trend, seasonal = decompose(x, self.kernel_size, self.operator)
        return (
            self._project(trend, p["trend_weight"], p["trend_bias"])
            + self._project(seasonal, p["seasonal_weight"], p["seasonal_bias"])
        )


def build_model(config: ModelConfig, lookback: int, horizon: int, channels: int, seed: int = 0) -> Forecaster:
    if config.name == "linear":
        return LinearModel(lookback, horizon, channels, config.individual, seed)
    return DLinearModel(lookback, horizon, channels, config.kernel_size, config.individual, seed)


def save_checkpoint(model: Forecaster, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.to_checkpoint().model_dump_json(), encoding="utf-8")
    logger.success(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: Path) -> Forecaster:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}", {"path": str(path)})
    try:
        ckpt = CheckpointSchema.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"Checkpoint {path} is malformed: {e}", {"path": str(path)}) from e

    if ckpt.model == "linear":
        model: Forecaster = LinearModel(ckpt.lookback, ckpt.horizon, ckpt.channels, ckpt.individual)
    else:
        model = DLinearModel(ckpt.lookback, ckpt.horizon, ckpt.channels, ckpt.kernel_size, ckpt.individual)
    model.load_state_dict({
        name: np.asarray(values, dtype=np.float64).reshape(ckpt.shapes[name])
        for name, values in ckpt.params.items()
    })
    return model
