"""Point-wise MSE and the patch-level correlation, variance and mean losses.

All losses are plain compositions of autograd ops, so gradients flow to the
prediction (and to the truth when it is attached). Averages run over every
(batch, channel, patch) triple, which equals averaging over patches, then
channels, then batch because N is uniform.
"""
from typing import Sequence, Tuple

import numpy as np

from core.autograd import Tensor, as_tensor, log_softmax
from core.exceptions import ConfigError, ShapeError
from schemas.schema import LossBreakdown, PatchSet, PatchStats

CORR_EPS = 1e-8
# keeps sqrt away from 0 for constant patches; invisible next to any real variance
VAR_FLOOR = 1e-30
KL_FLOOR = 1e-300

ZERO = Tensor(0.0)


def mse_loss(truth, pred) -> Tensor:
    truth, pred = as_tensor(truth), as_tensor(pred)
    if truth.shape != pred.shape:
        raise ShapeError(f"mse_loss shape mismatch: {truth.shape} vs {pred.shape}")
    return (pred - truth).square().mean()


def _check_pair(truth: PatchSet, pred: PatchSet) -> None:
    if truth.plan != pred.plan or truth.data.shape != pred.data.shape:
        raise ShapeError(
            f"patch sets differ: {truth.data.shape} (P={truth.plan.patch_length}) "
            f"vs {pred.data.shape} (P={pred.plan.patch_length})"
        )


def patch_stats(patches: PatchSet) -> PatchStats:
    """Per-patch mean and population standard deviation, both (B, C, N)."""
    x = patches.data
    mu = x.mean(axis=-1, keepdims=True)
    var = (x - mu).square().mean(axis=-1)
    return PatchStats(mean=x.mean(axis=-1), std=(var + VAR_FLOOR).sqrt())


def corr_loss(truth: PatchSet, pred: PatchSet, eps: float = CORR_EPS) -> Tensor:
    """Mean over patches of 1 - Pearson correlation between truth and prediction."""
    _check_pair(truth, pred)
    if truth.plan.patch_length < 2:
        raise ShapeError("correlation needs at least two points per patch")
    y, y_hat = truth.data, pred.data
    dy = y - y.mean(axis=-1, keepdims=True)
    dy_hat = y_hat - y_hat.mean(axis=-1, keepdims=True)

    covariance = (dy * dy_hat).sum(axis=-1)
    sigma = (dy.square().mean(axis=-1) + VAR_FLOOR).sqrt()
    sigma_hat = (dy_hat.square().mean(axis=-1) + VAR_FLOOR).sqrt()
    rho = covariance / (truth.plan.patch_length * sigma * sigma_hat + eps)
    return (1.0 - rho).mean()


def var_loss(truth: PatchSet, pred: PatchSet) -> Tensor:
    """Mean over patches of KL(softmax(truth patch) || softmax(pred patch))."""
    _check_pair(truth, pred)
    log_t = log_softmax(truth.data, axis=-1)
    log_s = log_softmax(pred.data, axis=-1)
    t = log_t.exp()
    keep = Tensor((t.data >= KL_FLOOR).astype(np.float64))
    kl = (t * keep * (log_t - log_s)).sum(axis=-1)
    return kl.mean()


def mean_loss(truth: PatchSet, pred: PatchSet) -> Tensor:
    """Mean absolute difference of patch means."""
    _check_pair(truth, pred)
    return (truth.data.mean(axis=-1) - pred.data.mean(axis=-1)).abs().mean()


def component_losses(
    truth: PatchSet,
    pred: PatchSet,
    eps: float = CORR_EPS,
    active: Sequence[bool] = (True, True, True),
) -> Tuple[Tensor, Tensor, Tensor]:
    """(corr, var, mean) losses; disabled components come back as a detached 0."""
    use_corr, use_var, use_mean = active
    return (
        corr_loss(truth, pred, eps) if use_corr else ZERO,
        var_loss(truth, pred) if use_var else ZERO,
        mean_loss(truth, pred) if use_mean else ZERO,
    )


def ps_loss(l_corr: Tensor, l_var: Tensor, l_mean: Tensor, alpha: float, beta: float, gamma: float) -> Tensor:
    """alpha*corr + beta*var + gamma*mean with the weights held constant."""
    for name, weight in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if weight < 0:
            raise ConfigError(f"loss weight {name} must be non-negative, got {weight}")
    return float(alpha) * l_corr + float(beta) * l_var + float(gamma) * l_mean


def loss_breakdown(
    truth,
    pred,
    truth_patches: PatchSet,
    pred_patches: PatchSet,
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
    eps: float = CORR_EPS,
) -> LossBreakdown:
    l_corr, l_var, l_mean = component_losses(truth_patches, pred_patches, eps)
    return LossBreakdown(
        l_mse=mse_loss(truth, pred),
        l_corr=l_corr,
        l_var=l_var,
        l_mean=l_mean,
        l_ps=ps_loss(l_corr, l_var, l_mean, *weights),
    )
