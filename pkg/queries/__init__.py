from queries.dataset_queries import (
    BatchLoader,
    DatasetView,
    RawDataset,
    Scaler,
    load_csv,
    split,
    split_borders,
    windows
)
