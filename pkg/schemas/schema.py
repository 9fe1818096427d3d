from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, Generic, List, Literal, Optional, Tuple, TypeVar

import numpy as np

from core.autograd import Tensor

# Generic type for response data
T = TypeVar('T')

HORIZONS = (96, 192, 336, 720)


class ResponseModel(BaseModel, Generic[T]):
    """Envelope printed by every CLI command"""
    status: str = Field(..., description="Status of Response(success/fail)")
    data: Optional[T] = Field(None, description="Payload of the command")
    message: Optional[str] = Field(None, description="Error message when fail happened")


#
# Patching
#
class SpectrumResult(BaseModel):
    """Batch-averaged amplitude spectrum over frequencies 1..T//2 (DC excluded)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    amplitudes: np.ndarray = Field(..., description="A[f-1] is the amplitude at frequency f")
    dominant_frequency: int = Field(..., ge=1)


class PatchPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon: int = Field(..., ge=1, description="Series length T the plan was derived for")
    dominant_frequency: int = Field(..., ge=1)
    period: int = Field(..., ge=1)
    patch_length: int = Field(..., ge=1)
    stride: int = Field(..., ge=1)
    patch_count: int = Field(..., ge=1)
    threshold: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _fits_horizon(self):
        if self.stride * (self.patch_count - 1) + self.patch_length > self.horizon:
            raise ValueError("patches overrun the horizon")
        return self


class PatchSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: Tensor = Field(..., description="(B, C, N, P) patches")
    plan: PatchPlan


#
# Structural loss
#
class PatchStats(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: Tensor
    std: Tensor


class LossBreakdown(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    l_mse: Tensor
    l_corr: Tensor
    l_var: Tensor
    l_mean: Tensor
    l_ps: Tensor

    def as_floats(self) -> Dict[str, float]:
        return {name: getattr(self, name).item() for name in ("l_mse", "l_corr", "l_var", "l_mean", "l_ps")}


#
# Gradient-based dynamic weighting
#
class WeightState(BaseModel):
    step: int = Field(0, ge=0)
    epoch: int = Field(0, ge=0)
    g_corr: float = Field(0.0, ge=0)
    g_var: float = Field(0.0, ge=0)
    g_mean: float = Field(0.0, ge=0)
    g_bar: float = Field(0.0, ge=0)
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(1.0, ge=0)
    gamma: float = Field(1.0, ge=0)
    c: float = 1.0
    v: float = 1.0
    patch_length: int = Field(0, ge=0)
    patch_count: int = Field(0, ge=0)


class TotalLossConfig(BaseModel):
    lam: float = Field(1.0, ge=0, alias="lambda")
    gdw_enabled: bool = True
    fixed_weights: Optional[Tuple[float, float, float]] = None

    model_config = ConfigDict(populate_by_name=True)


#
# Metrics
#
class WarpingPath(BaseModel):
    pairs: List[Tuple[int, int]] = Field(..., description="Aligned (i, j) index pairs, 0-based")

    def __len__(self):
        return len(self.pairs)


class MetricsReport(BaseModel):
    mse: float
    mae: float
    dtw_mean: Optional[float] = None
    tdi_mean: Optional[float] = None
    pcc_mean: Optional[float] = None


#
# Data pipeline
#
class SplitSpec(BaseModel):
    """Chronological train/val/test borders; val and test carry L rows of history."""
    mode: Literal["ett_hourly", "ett_minute", "ratio"] = "ett_hourly"
    train_ratio: float = Field(0.7, gt=0, lt=1)
    test_ratio: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _ratios(self):
        if self.train_ratio + self.test_ratio >= 1:
            raise ValueError("train_ratio + test_ratio must leave room for validation")
        return self


#
# Experiment configuration
#
class DatasetConfig(BaseModel):
    path: str = Field(..., description="CSV file, absolute or relative to PSLOSS_DATA_ROOT")
    split: SplitSpec = Field(default_factory=SplitSpec)
    window_stride: int = Field(1, ge=1)


class ModelConfig(BaseModel):
    name: Literal["dlinear", "linear"] = "dlinear"
    kernel_size: int = Field(25, ge=1)
    individual: bool = Field(False, description="Per-channel weights instead of one shared set")

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value):
        if value % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return value


class LossConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    mode: Literal["mse_only", "mse_plus_ps"] = "mse_plus_ps"
    lam: float = Field(1.0, ge=0, alias="lambda")
    delta: int = Field(48, ge=2)
    corr_eps: float = Field(1e-8, gt=0)
    weight_eps: float = Field(1e-12, gt=0)
    scale_scope: Literal["batch", "channel"] = "batch"


class AblationConfig(BaseModel):
    no_corr: bool = False
    no_var: bool = False
    no_mean: bool = False
    no_patching: bool = False
    no_weighting: bool = False

    @model_validator(mode="after")
    def _keeps_one_component(self):
        if self.no_corr and self.no_var and self.no_mean:
            raise ValueError("at least one structural component must stay enabled")
        return self


class OptimizerConfig(BaseModel):
    learning_rate: float = Field(0.005, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(32, ge=1)


class TrainingConfig(BaseModel):
    epochs: int = Field(10, ge=1)
    patience: int = Field(3, ge=1)
    log_interval: int = Field(50, ge=1)
    prefetch: bool = True
    eval_shape_metrics: bool = True
    dump_predictions: bool = False
    dump_original_scale: bool = False


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    dataset: DatasetConfig
    lookback: int = Field(336, ge=1)
    horizon: int = 96
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    seed: int = 2021
    output_dir: Optional[str] = None

    @field_validator("horizon")
    @classmethod
    def _known_horizon(cls, value):
        if value not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}")
        return value

    @model_validator(mode="after")
    def _kernel_fits_lookback(self):
        if self.model.kernel_size > 2 * self.lookback - 1:
            raise ValueError("kernel_size must not exceed 2 * lookback - 1")
        return self

    @property
    def ps_enabled(self) -> bool:
        return self.loss.mode == "mse_plus_ps"

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


#
# Run outputs
#
class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_mse: float
    val_mse: float
    best_val_mse: float
    seconds: float


class RunResult(BaseModel):
    name: str
    seed: int
    config: Dict[str, Any]
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    test: Optional[MetricsReport] = None
    weights_trace: List[WeightState] = Field(default_factory=list)
    mean_epoch_seconds: float = 0.0
    checkpoint_path: Optional[str] = None


class CheckpointSchema(BaseModel):
    """Versioned JSON container for forecaster weights"""
    format_version: Literal[1] = 1
    model: Literal["dlinear", "linear"]
    lookback: int = Field(..., ge=1)
    horizon: int = Field(..., ge=1)
    channels: int = Field(..., ge=1)
    kernel_size: int = Field(1, ge=1)
    individual: bool = False
    shapes: Dict[str, List[int]]
    params: Dict[str, List[float]]

    @model_validator(mode="after")
    def _sizes_match(self):
        for name, values in self.params.items():
            if name not in self.shapes:
                raise ValueError(f"missing shape for parameter {name}")
            if int(np.prod(self.shapes[name])) != len(values):
                raise ValueError(f"parameter {name} has {len(values)} values for shape {self.shapes[name]}")
        return self
