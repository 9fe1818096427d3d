from datetime import datetime
from typing import Optional

import pandas as pd

ACCEPTED_FORMATS = [
    "%Y-%m-%d %H:%M:%S",  # 2016-07-01 00:00:00
    "%Y-%m-%d %H:%M",  # 2016-07-01 00:00
    "%Y-%m-%d",  # 2016-07-01
    "%Y/%m/%d %H:%M",  # 2016/07/01 00:00
    "%d/%m/%Y %H:%M:%S",  # 01/07/2016 00:00:00
    "%d/%m/%Y",  # 01/07/2016
    "%m/%d/%Y %H:%M:%S",  # 07/01/2016 00:00:00
    "%m/%d/%Y",  # 07/01/2016
]


def detect_format(timestamp: str) -> Optional[str]:
    for fmt in ACCEPTED_FORMATS:
        try:
            datetime.strptime(timestamp.strip(), fmt)
            return fmt
        except ValueError:
            continue
    return None


def parse_timestamp_column(values: pd.Series) -> pd.Series:
    """Parse a column of timestamps that all share one of the accepted formats.

    Raises ValueError naming the first row no accepted format can read.
    """
    stripped = values.astype(str).str.strip()
    fmt = detect_format(stripped.iloc[0]) if len(stripped) else None
    if fmt is not None:
        parsed = pd.to_datetime(stripped, format=fmt, errors="coerce")
        if not parsed.isna().any():
            return parsed
        bad_row = int(parsed.isna().to_numpy().argmax())
    else:
        bad_row = 0
    raise ValueError(f"Unsupported timestamp format at row {bad_row}: {stripped.iloc[bad_row]!r}", bad_row)
