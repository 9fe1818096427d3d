"""Point-wise and shape-aware evaluation metrics: MSE, MAE, DTW, TDI, PCC."""
from typing import List, Optional, Tuple

import numpy as np

from core.autograd import Tensor
from core.exceptions import DomainError, ShapeError
from schemas.schema import MetricsReport, WarpingPath

PCC_EPS = 1e-12
# cells of the (M, T+1, T+1) accumulated-cost table processed per chunk
DTW_CELL_BUDGET = 20_000_000
ADMISSIBLE_STEPS = {(1, 0), (0, 1), (1, 1)}


def _plain(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _accumulate(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Accumulated squared-Euclidean cost, padded with an inf border; (M, T+1, T+1).

    Cells on one anti-diagonal only depend on the two previous ones, so each
    anti-diagonal is filled in one vectorized step across all M series.
    """
    m, length = y.shape
    cost = (y[:, :, None] - y_hat[:, None, :]) ** 2
    table = np.full((m, length + 1, length + 1), np.inf)
    table[:, 0, 0] = 0.0
    for k in range(2, 2 * length + 1):
        ii = np.arange(max(1, k - length), min(length, k - 1) + 1)
        jj = k - ii
        best = np.minimum(np.minimum(table[:, ii - 1, jj - 1], table[:, ii - 1, jj]), table[:, ii, jj - 1])
        table[:, ii, jj] = cost[:, ii - 1, jj - 1] + best
    return table


def _backtrack(table: np.ndarray, trace: bool = False) -> Tuple[np.ndarray, Optional[List[Tuple[np.ndarray, np.ndarray]]]]:
    """Walk every optimal path back from (T-1, T-1), preferring diagonal, then vertical, then horizontal.

    Returns the summed squared index offsets along each path and, with
    ``trace``, the visited (i, j) arrays in reverse order.
    """
    m, size, _ = table.shape
    length = size - 1
    rows = np.arange(m)
    i = np.full(m, length)
    j = np.full(m, length)
    offsets = np.zeros(m)
    history = [(i - 1, j - 1)] if trace else None

    active = (i > 1) | (j > 1)
    while active.any():
        candidates = np.stack(
            [table[rows, i - 1, j - 1], table[rows, i - 1, j], table[rows, i, j - 1]],
            axis=1,
        )
        move = np.argmin(candidates, axis=1)
        i = np.where(active & (move != 2), i - 1, i)
        j = np.where(active & (move != 1), j - 1, j)
        offsets += np.where(active, (i - j) ** 2, 0)
        if trace:
            history.append((i - 1, j - 1))
        active = (i > 1) | (j > 1)
    return offsets, history


def _check_pair(y: np.ndarray, y_hat: np.ndarray) -> None:
    if y.shape != y_hat.shape:
        raise ShapeError(f"series shapes differ: {y.shape} vs {y_hat.shape}")
    if y.shape[-1] < 1:
        raise DomainError("DTW needs non-empty series")


def dtw(y, y_hat) -> Tuple[float, WarpingPath]:
    """DTW distance (squared Euclidean point cost) and its optimal warping path."""
    y, y_hat = _plain(y).reshape(-1), _plain(y_hat).reshape(-1)
    _check_pair(y, y_hat)
    table = _accumulate(y[None, :], y_hat[None, :])
    _, history = _backtrack(table, trace=True)
    pairs = [(int(i[0]), int(j[0])) for i, j in reversed(history)]
    return float(table[0, -1, -1]), WarpingPath(pairs=pairs)


def dtw_batch(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    """DTW distances and TDI values for M equal-length pairs given as (M, T) arrays."""
    y, y_hat = _plain(y), _plain(y_hat)
    if y.ndim != 2:
        raise ShapeError(f"dtw_batch expects (M, T) arrays, got {y.shape}")
    _check_pair(y, y_hat)
    m, length = y.shape
    chunk = max(1, DTW_CELL_BUDGET // ((length + 1) ** 2))
    distances = np.empty(m)
    tdis = np.empty(m)
    for begin in range(0, m, chunk):
        table = _accumulate(y[begin:begin + chunk], y_hat[begin:begin + chunk])
        offsets, _ = _backtrack(table)
        distances[begin:begin + chunk] = table[:, -1, -1]
        tdis[begin:begin + chunk] = offsets / length ** 2
    return distances, tdis


def validate_path(path: WarpingPath, length: int) -> None:
    pairs = path.pairs
    if not pairs:
        raise DomainError("warping path is empty")
    if pairs[0] != (0, 0) or pairs[-1] != (length - 1, length - 1):
        raise DomainError(f"warping path must run from (0, 0) to ({length - 1}, {length - 1})")
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if (i1 - i0, j1 - j0) not in ADMISSIBLE_STEPS:
            raise DomainError(f"inadmissible step ({i0}, {j0}) -> ({i1}, {j1})")


def tdi(path: WarpingPath, length: int) -> float:
    """Time distortion index: sum over the path of (i - j)^2 / T^2."""
    validate_path(path, length)
    return float(sum((i - j) ** 2 for i, j in path.pairs) / length ** 2)


def pcc(y, y_hat, eps: float = PCC_EPS) -> float:
    y, y_hat = _plain(y).reshape(-1), _plain(y_hat).reshape(-1)
    if y.shape != y_hat.shape:
        raise ShapeError(f"series shapes differ: {y.shape} vs {y_hat.shape}")
    if y.shape[0] < 2:
        raise DomainError("PCC needs at least two points")
    return float(_pcc_rows(y[None, :], y_hat[None, :], eps)[0])


def _pcc_rows(y: np.ndarray, y_hat: np.ndarray, eps: float) -> np.ndarray:
    dy = y - y.mean(axis=-1, keepdims=True)
    dy_hat = y_hat - y_hat.mean(axis=-1, keepdims=True)
    numerator = (dy * dy_hat).sum(axis=-1)
    denominator = np.sqrt((dy * dy).sum(axis=-1)) * np.sqrt((dy_hat * dy_hat).sum(axis=-1))
    return numerator / (denominator + eps)


def evaluate(truth, pred, shape_metrics: bool = True) -> MetricsReport:
    """MSE/MAE over all elements; DTW, TDI and PCC averaged over (sample, channel) series."""
    y, y_hat = _plain(truth), _plain(pred)
    if y.shape != y_hat.shape:
        raise ShapeError(f"evaluate shape mismatch: {y.shape} vs {y_hat.shape}")
    error = y_hat - y
    report = {"mse": float(np.mean(error * error)), "mae": float(np.mean(np.abs(error)))}
    if shape_metrics:
        series = y.reshape(-1, y.shape[-1])
        series_hat = y_hat.reshape(-1, y.shape[-1])
        distances, tdis = dtw_batch(series, series_hat)
        report["dtw_mean"] = float(distances.mean())
        report["tdi_mean"] = float(tdis.mean())
        if y.shape[-1] >= 2:
            report["pcc_mean"] = float(_pcc_rows(series, series_hat, PCC_EPS).mean())
    return MetricsReport(**report)
