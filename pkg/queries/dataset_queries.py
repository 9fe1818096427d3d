"""CSV ingestion, chronological splits, scaling and sliding-window batches."""
import queue
import threading
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import ConfigError, IngestError
from schemas.schema import SplitSpec
from utils.convert_timestamp import parse_timestamp_column
from utils.log import setup_logger

logger = setup_logger(__name__)

HOURS_PER_MONTH = 30 * 24
STD_FLOOR = 1e-8

# (train, val, test) lengths in months for the ETT protocol
ETT_MONTHS = (12, 4, 4)
ROWS_PER_HOUR = {"ett_hourly": 1, "ett_minute": 4}


class RawDataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    timestamps: List[str]
    values: np.ndarray = Field(..., description="(rows, C) float64 matrix")
    channels: List[str]
    source: Optional[str] = None

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[1])


class DatasetView(BaseModel):
    """Contiguous slice of a dataset; ``start`` is the first row in source coordinates."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    values: np.ndarray
    start: int = 0
    channels: List[str] = Field(default_factory=list)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[1])

    def origin_count(self, lookback: int) -> int:
        """Positions where a full lookback window fits."""
        return max(len(self) - lookback + 1, 0)

    def with_values(self, values: np.ndarray) -> "DatasetView":
        return DatasetView(name=self.name, values=values, start=self.start, channels=self.channels)


def load_csv(path: str | Path) -> RawDataset:
    """Read an ETT-style CSV: header row, timestamp column first, one column per channel."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"Dataset not found: {path}", {"path": str(path)})
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestError(f"Cannot read {path}: {e}", {"path": str(path)}) from e
    if frame.shape[1] < 2:
        raise IngestError(f"{path} needs a timestamp column and at least one channel", {"path": str(path)})
    if frame.shape[0] == 0:
        raise IngestError(f"{path} has no data rows", {"path": str(path)})

    raw = frame.iloc[:, 1:].apply(lambda col: col.str.strip())
    numeric = raw.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(numeric)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        column = str(raw.columns[col])
        raise IngestError(
            f"Unparsable cell at row {row}, column '{column}': {raw.iat[row, col]!r}",
            {"path": str(path), "row": row, "column": column, "line": row + 2},
        )

    try:
        stamps = parse_timestamp_column(frame.iloc[:, 0])
    except ValueError as e:
        row = e.args[1] if len(e.args) > 1 else 0
        raise IngestError(str(e.args[0]), {"path": str(path), "row": row, "column": str(frame.columns[0])}) from e
    steps = stamps.diff().iloc[1:]
    if (steps <= pd.Timedelta(0)).any():
        row = int(np.argmax((steps <= pd.Timedelta(0)).to_numpy())) + 1
        raise IngestError(
            f"Timestamps are not strictly increasing at row {row}",
            {"path": str(path), "row": row, "column": str(frame.columns[0])},
        )

    dataset = RawDataset(
        timestamps=frame.iloc[:, 0].str.strip().tolist(),
        values=numeric,
        channels=[str(c) for c in raw.columns],
        source=str(path),
    )
    logger.success(f"Loaded {path.name}: {dataset.rows} rows x {dataset.n_channels} channels")
    return dataset


def split_borders(rows: int, spec: SplitSpec, lookback: int) -> List[Tuple[int, int]]:
    """[start, end) rows of train, val and test; val/test start L rows early."""
    if spec.mode in ROWS_PER_HOUR:
        unit = HOURS_PER_MONTH * ROWS_PER_HOUR[spec.mode]
        train_end = ETT_MONTHS[0] * unit
        val_end = train_end + ETT_MONTHS[1] * unit
        test_end = val_end + ETT_MONTHS[2] * unit
    else:
        n_train = int(rows * spec.train_ratio)
        n_test = int(rows * spec.test_ratio)
        train_end = n_train
        val_end = rows - n_test
        test_end = rows

    if rows < test_end:
        raise ConfigError(f"{spec.mode} split needs at least {test_end} rows, dataset has {rows}")
    if lookback > train_end:
        raise ConfigError(f"lookback {lookback} is larger than the train split ({train_end} rows)")
    if val_end <= train_end:
        raise ConfigError(f"validation split is empty for {rows} rows")
    return [(0, train_end), (train_end - lookback, val_end), (val_end - lookback, test_end)]


def split(dataset: RawDataset, spec: SplitSpec, lookback: int) -> Tuple[DatasetView, DatasetView, DatasetView]:
    views = tuple(
        DatasetView(name=name, values=dataset.values[start:end], start=start, channels=dataset.channels)
        for name, (start, end) in zip(("train", "val", "test"), split_borders(dataset.rows, spec, lookback))
    )
    logger.info(f"Split {spec.mode}: " + ", ".join(f"{v.name}={len(v)} rows" for v in views))
    return views


class Scaler:
    """Per-channel z-score fitted on the train slice only."""

    def __init__(self):
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None

    def fit(self, view: DatasetView) -> "Scaler":
        self.mean = view.values.mean(axis=0)
        self.std = np.maximum(view.values.std(axis=0), STD_FLOOR)
        return self

    def _require_fit(self):
        if self.mean is None:
            raise ConfigError("Scaler used before fit")

    def transform(self, values: np.ndarray) -> np.ndarray:
        self._require_fit()
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        self._require_fit()
        return values * self.std + self.mean

    def transform_view(self, view: DatasetView) -> DatasetView:
        return view.with_values(self.transform(view.values))


def window_starts(length: int, lookback: int, horizon: int, stride: int = 1) -> np.ndarray:
    last = length - lookback - horizon
    if last < 0:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, last + 1, stride, dtype=np.int64)


def gather_windows(values: np.ndarray, starts: np.ndarray, lookback: int, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (B, C, L) inputs and (B, C, T) targets for the given start rows."""
    x_index = starts[:, None] + np.arange(lookback)[None, :]
    y_index = starts[:, None] + lookback + np.arange(horizon)[None, :]
    return (
        np.transpose(values[x_index], (0, 2, 1)),
        np.transpose(values[y_index], (0, 2, 1)),
    )


def windows(view: DatasetView, lookback: int, horizon: int, stride: int = 1) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Every (x: C x L, y: C x T) pair with start offsets s, s + L + T <= len(view)."""
    for s in window_starts(len(view), lookback, horizon, stride):
        yield view.values[s:s + lookback].T, view.values[s + lookback:s + lookback + horizon].T


_DONE = object()


class BatchLoader:
    """Mini-batches of windows, optionally shuffled and prefetched on a helper thread.

    The order for epoch e depends only on (seed, e), so runs sharing a seed
    see identical data order.
    """

    def __init__(
        self,
        view: DatasetView,
        lookback: int,
        horizon: int,
        batch_size: int,
        stride: int = 1,
        shuffle: bool = False,
        seed: int = 0,
        prefetch: bool = False,
        queue_size: int = 4,
    ):
        self.view = view
        self.lookback = lookback
        self.horizon = horizon
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.seed = seed
        self.prefetch = prefetch
        self.queue_size = queue_size
        self.starts = window_starts(len(view), lookback, horizon, stride)

    @property
    def n_windows(self) -> int:
        return int(self.starts.shape[0])

    def __len__(self) -> int:
        return -(-self.n_windows // self.batch_size)

    def order(self, epoch: int = 0) -> np.ndarray:
        if not self.shuffle:
            return self.starts
        rng = np.random.default_rng([self.seed, epoch])
        return self.starts[rng.permutation(self.n_windows)]

    def _batches(self, order: np.ndarray):
        for index, begin in enumerate(range(0, order.shape[0], self.batch_size)):
            x, y = gather_windows(self.view.values, order[begin:begin + self.batch_size], self.lookback, self.horizon)
            yield index, x, y

    def iterate(self, epoch: int = 0) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        order = self.order(epoch)
        if not self.prefetch:
            yield from self._batches(order)
            return

        out: queue.Queue = queue.Queue(maxsize=self.queue_size)
        stop = threading.Event()

        def offer(item) -> bool:
            while not stop.is_set():
                try:
                    out.put(item, timeout=0.1)
                    return True
                except queue.Full:
                    continue
            return False

        def produce():
            try:
                for item in self._batches(order):
                    if not offer(item):
                        return
                offer(_DONE)
            except Exception as e:  # surfaced on the consumer side
                offer(e)

        worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
        worker.start()
        try:
            while True:
                item = out.get()
                if item is _DONE:
                    break
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            stop.set()
            worker.join(timeout=1.0)

    def __iter__(self):
        return self.iterate(0)
