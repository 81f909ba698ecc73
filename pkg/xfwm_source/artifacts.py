# artifacts.py
"""Atomic CSV / JSON writers for run outputs.

Files are written to a temporary name in the destination directory and moved
into place with os.replace, so readers never see a half-written artifact.
"""
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.9g"


@contextmanager
def atomic_path(path, suffix=None):
    """Yield a temporary path next to ``path``; rename onto it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=suffix or path.suffix, dir=path.parent)
    os.close(fd)
    tmp = Path(tmp)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_csv(df: pd.DataFrame, path, index=False, **kwargs) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        df.to_csv(tmp, index=index, float_format=CSV_FLOAT_FORMAT, lineterminator="\n", **kwargs)
    log.info("Wrote %d rows → %s", len(df), path)
    return path


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def to_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_default)


def write_json(payload, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        tmp.write_text(to_json(payload) + "\n", encoding="utf-8")
    log.info("Wrote %s", path)
    return path


def write_text(text: str, path) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return path
