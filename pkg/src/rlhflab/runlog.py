"""JSON-lines run log.

One record per line, keys sorted, flushed after every write.  The header
line carries the only wall-clock field, ``wall_time``; everything else is a
deterministic function of the config and seed.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Iterator

import numpy as np

FORMAT_VERSION = 1
TIMESTAMP_FIELD = "wall_time"


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot log {type(obj).__name__}")


def dumps(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True, default=_default, allow_nan=True)


class RunLog:
    """Append-only JSONL writer; usable as the ``sink`` of a scheduler run."""

    def __init__(self, path, config_flat: dict, profile: str):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self.write({"type": "header", "format": FORMAT_VERSION, "profile": profile,
                    "config": config_flat, TIMESTAMP_FIELD: time.time()})

    def write(self, entry: dict) -> None:
        self._fh.write(dumps(entry) + "\n")
        self._fh.flush()

    __call__ = write

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def comparable_lines(path) -> list[str]:
    """Log lines with the timestamp removed, for byte-level comparison of reruns."""
    out = []
    for entry in read_log(path):
        entry.pop(TIMESTAMP_FIELD, None)
        out.append(dumps(entry))
    return out


def log_curve(path, split: str = "test") -> list[tuple[int, float]]:
    return [(e["n_choices"], e["win_rate"]) for e in read_log(path)
            if e.get("type") == "eval" and e.get("split") == split]


def log_header(path) -> dict:
    first = next(read_log(path), None)
    if first is None or first.get("type") != "header":
        raise ValueError(f"{path}: missing header record")
    return first
