"""Report emission: line-delimited JSON records and CSV summary grids.

Records carry no timestamps and serialize with sorted keys, so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .secagg import Transcript

__all__ = [
    "config_record",
    "read_report",
    "round_record",
    "summary_record",
    "write_report",
    "write_summary_csv",
    "write_transcript",
]


def _plain(value: Any) -> Any:
    """Coerce numpy scalars/arrays so json emits deterministic plain types."""
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_record(config_dict: dict) -> dict:
    return {"type": "config", "config": _plain(config_dict)}


def round_record(round_index: int, **metrics: Any) -> dict:
    rec = {"type": "round", "round": round_index}
    rec.update({k: _plain(v) for k, v in metrics.items()})
    return rec


def summary_record(**fields: Any) -> dict:
    rec = {"type": "summary"}
    rec.update({k: _plain(v) for k, v in fields.items()})
    return rec


def write_report(path: str | Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(_plain(rec), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    return path


def read_report(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_summary_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    """One grid as CSV; missing cells stay empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _plain(v) for k, v in row.items() if k in columns})
    return path


def write_transcript(path: str | Path, transcript: Transcript) -> Path:
    """One JSON line per recorded protocol message."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for e in transcript.entries:
            rec = {
                "round": e.round_index,
                "phase": e.phase,
                "from": e.sender,
                "to": e.receiver,
                "payload_bytes": e.payload_bytes,
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    return path
