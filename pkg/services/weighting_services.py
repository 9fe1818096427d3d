"""Gradient-based dynamic weighting of the three structural loss components.

Each step, the gradient L2-norm of every component with respect to the
forecaster's output projection sets that component's weight, so the weighted
gradients share one magnitude. The mean-loss weight is further scaled by
correlation (c) and dispersion (v) agreement between truth and prediction.
None of the weights carry gradient.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from core.autograd import Tensor, backward
from core.exceptions import ConfigError, ShapeError, TapeError
from schemas.schema import PatchPlan, TotalLossConfig, WeightState
from utils.log import setup_logger

logger = setup_logger(__name__)

WEIGHT_EPS = 1e-12
ALL_ACTIVE = (True, True, True)

Norms = Tuple[float, float, float]


def _shared_tape(tensors: Sequence[Tensor]):
    tapes = {id(t.tape): t.tape for t in tensors if t.tape is not None}
    if len(tapes) > 1:
        raise TapeError("losses and parameters must share one gradient tape")
    return next(iter(tapes.values()), None)


def grad_norms(l_corr: Tensor, l_var: Tensor, l_mean: Tensor, params: Sequence[Tensor]) -> Norms:
    """L2-norm of each component's gradient w.r.t. ``params``, flattened together.

    Runs one backward pass per component over the shared forward tape. A
    detached component (an ablated term) has norm 0.
    """
    losses = (l_corr, l_var, l_mean)
    tape = _shared_tape(list(losses) + list(params))
    norms = []
    for loss in losses:
        if tape is None or loss.tape is None:
            norms.append(0.0)
            continue
        grads = backward(loss, params)
        norms.append(float(np.sqrt(sum(float(np.sum(g.data * g.data)) for g in grads.values()))))
    return norms[0], norms[1], norms[2]


def average_norm(norms: Norms, active: Sequence[bool] = ALL_ACTIVE) -> float:
    used = [n for n, on in zip(norms, active) if on]
    return float(sum(used) / len(used)) if used else 0.0


def compute_weights(
    norms: Norms,
    c: float,
    v: float,
    eps: float = WEIGHT_EPS,
    active: Sequence[bool] = ALL_ACTIVE,
) -> Tuple[float, float, float]:
    """alpha = G/G_corr, beta = G/G_var, gamma = c*v*G/G_mean, G the mean norm.

    Disabled components get weight 0 and are left out of the mean. When every
    active norm is below ``eps`` the step is treated as a perfect fit and the
    weights fall back to (1, 1, c*v).
    """
    g_corr, g_var, g_mean = norms
    use_corr, use_var, use_mean = active
    if all(n < eps for n, on in zip(norms, active) if on):
        return (
            1.0 if use_corr else 0.0,
            1.0 if use_var else 0.0,
            c * v if use_mean else 0.0,
        )
    g_bar = average_norm(norms, active)
    alpha = g_bar / (g_corr + eps) if use_corr else 0.0
    beta = g_bar / (g_var + eps) if use_var else 0.0
    gamma = c * v * g_bar / (g_mean + eps) if use_mean else 0.0
    return alpha, beta, gamma


def _plain(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _agreement(y: np.ndarray, y_hat: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """c and v along the last axis of two equally shaped arrays."""
    dy = y - y.mean(axis=-1, keepdims=True)
    dy_hat = y_hat - y_hat.mean(axis=-1, keepdims=True)
    cov = (dy * dy_hat).mean(axis=-1)
    s = np.sqrt((dy * dy).mean(axis=-1))
    s_hat = np.sqrt((dy_hat * dy_hat).mean(axis=-1))
    c = 0.5 * (1.0 + cov / (s * s_hat + eps))
    v = 2.0 * s * s_hat / (s * s + s_hat * s_hat + eps)
    return c, v


def scale_factors(truth, pred, eps: float = WEIGHT_EPS, scope: str = "batch") -> Tuple[float, float]:
    """Correlation (c) and dispersion (v) agreement, both detached.

    ``batch`` flattens all B*C*T values; ``channel`` computes c and v per
    channel over (B, T) and averages them.
    """
    y, y_hat = _plain(truth), _plain(pred)
    if y.shape != y_hat.shape:
        raise ShapeError(f"scale_factors shape mismatch: {y.shape} vs {y_hat.shape}")
    if scope == "batch":
        c, v = _agreement(y.reshape(-1), y_hat.reshape(-1), eps)
    elif scope == "channel":
        if y.ndim != 3:
            raise ShapeError("channel scope needs (B, C, T) inputs")
        channels = y.shape[1]
        c, v = _agreement(
            np.moveaxis(y, 1, 0).reshape(channels, -1),
            np.moveaxis(y_hat, 1, 0).reshape(channels, -1),
            eps,
        )
        c, v = c.mean(), v.mean()
    else:
        raise ConfigError(f"unknown scale scope {scope!r}")
    return float(c), float(v)


def total_loss(l_mse: Tensor, l_ps: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    return l_mse + float(lam) * l_ps


class DynamicWeighting:
    """Per-step weight computation for one training run."""

    def __init__(
        self,
        config: TotalLossConfig,
        eps: float = WEIGHT_EPS,
        scope: str = "batch",
        active: Sequence[bool] = ALL_ACTIVE,
    ):
        self.config = config
        self.eps = eps
        self.scope = scope
        self.active = tuple(active)
        self.step = 0

    def weigh(
        self,
        truth,
        pred: Tensor,
        components: Tuple[Tensor, Tensor, Tensor],
        params: Sequence[Tensor],
        plan: Optional[PatchPlan] = None,
        epoch: int = 0,
    ) -> WeightState:
        c, v = scale_factors(truth, pred, self.eps, self.scope)
        if self.config.gdw_enabled:
            norms = grad_norms(*components, params)
            alpha, beta, gamma = compute_weights(norms, c, v, self.eps, self.active)
            g_bar = average_norm(norms, self.active)
        else:
            norms, g_bar = (0.0, 0.0, 0.0), 0.0
            fixed = self.config.fixed_weights or (1.0, 1.0, 1.0)
            alpha, beta, gamma = (w if on else 0.0 for w, on in zip(fixed, self.active))

        self.step += 1
        return WeightState(
            step=self.step,
            epoch=epoch,
            g_corr=norms[0],
            g_var=norms[1],
            g_mean=norms[2],
            g_bar=g_bar,
            alpha=alpha,
            beta=beta,
            gamma=gamma,
            c=c,
            v=v,
            patch_length=plan.patch_length if plan else 0,
            patch_count=plan.patch_count if plan else 0,
        )
