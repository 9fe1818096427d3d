"""Fourier-based adaptive patching.

The ground truth's amplitude spectrum picks a dominant frequency f; the
period p = T // f bounds the patch length, which is capped by a threshold
and then used to cut both series into half-overlapping patches.
"""
import numpy as np

from core.autograd import Tensor, as_tensor, frames
from core.exceptions import ConfigError, ShapeError
from schemas.schema import PatchPlan, PatchSet, SpectrumResult
from utils.log import setup_logger

logger = setup_logger(__name__)

MIN_HORIZON = 4
MIN_PATCH = 2
TIE_RTOL = 1e-10


def _as_array(series) -> np.ndarray:
    data = series.data if isinstance(series, Tensor) else np.asarray(series, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, None, :]
    elif data.ndim == 2:
        data = data[None, :, :]
    if data.ndim != 3:
        raise ShapeError(f"expected a (B, C, T) series, got shape {data.shape}")
    return data


def real_fft_amplitudes(series) -> SpectrumResult:
    """Batch- and channel-averaged amplitude spectrum of a (B, C, T) block.

    Runs outside the gradient tape. Frequencies whose amplitude is within a
    relative tolerance of the maximum tie, and the lowest of them wins.
    """
    data = _as_array(series)
    horizon = data.shape[-1]
    if horizon < MIN_HORIZON:
        raise ConfigError(f"spectrum needs T >= {MIN_HORIZON}, got T={horizon}")

    spectrum = np.abs(np.fft.rfft(data, axis=-1)).mean(axis=(0, 1))
    amplitudes = spectrum[1:horizon // 2 + 1]
    peak = amplitudes.max()
    tolerance = TIE_RTOL * max(float(peak), 1.0)
    dominant = int(np.flatnonzero(amplitudes >= peak - tolerance)[0]) + 1

    return SpectrumResult(amplitudes=amplitudes, dominant_frequency=dominant)


def make_patch_plan(spectrum: SpectrumResult, horizon: int, delta: int) -> PatchPlan:
    if delta < MIN_PATCH:
        raise ConfigError(f"patch length threshold must be >= {MIN_PATCH}, got {delta}")
    if horizon < MIN_HORIZON:
        raise ConfigError(f"patching needs T >= {MIN_HORIZON}, got T={horizon}")
    f = spectrum.dominant_frequency
    period = horizon // f
    patch_length = max(min(period // 2, delta), MIN_PATCH)
    stride = max(patch_length // 2, 1)
    patch_count = (horizon - patch_length) // stride + 1
    return PatchPlan(
        horizon=horizon,
        dominant_frequency=f,
        period=period,
        patch_length=patch_length,
        stride=stride,
        patch_count=patch_count,
        threshold=delta,
    )


def full_series_plan(horizon: int) -> PatchPlan:
    """One patch spanning the whole series (the no-patching ablation)."""
    return PatchPlan(
        horizon=horizon,
        dominant_frequency=1,
        period=horizon,
        patch_length=horizon,
        stride=horizon,
        patch_count=1,
        threshold=horizon,
    )


def plan_for_batch(truth, delta: int) -> PatchPlan:
    data = _as_array(truth)
    plan = make_patch_plan(real_fft_amplitudes(data), data.shape[-1], delta)
    logger.debug(f"Patch plan f={plan.dominant_frequency} P={plan.patch_length} S={plan.stride} N={plan.patch_count}")
    return plan


def segment(series, plan: PatchPlan) -> PatchSet:
    series = as_tensor(series)
    if series.ndim != 3:
        raise ShapeError(f"segment expects a (B, C, T) series, got shape {series.shape}")
    if series.shape[-1] != plan.horizon:
        raise ShapeError(f"series length {series.shape[-1]} does not match plan horizon {plan.horizon}")
    return PatchSet(data=frames(series, plan.patch_length, plan.stride), plan=plan)
