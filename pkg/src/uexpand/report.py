"""Report records: versioned JSON documents plus CSV series for plotting.

Layout of a report document (keys sorted, two-space indent)::

    {
      "command": "certify",
      "config": {...},          # the validated RunConfig, every key explicit
      "payload": {...},         # command specific, see README
      "schema_version": 1,
      "seed": 42,
      "timestamps": null        # or {"started": ..., "finished": ...} with --timestamps
    }
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, is_dataclass

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Plain JSON types from numpy scalars/arrays, dataclasses and tuples."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; strings keep the document standard and lossless
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class ReportRecord:
    command: str
    config: dict
    payload: dict
    seed: int
    schema_version: int = SCHEMA_VERSION
    timestamps: dict = None

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ReportRecord":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema_version {version!r}, expected {SCHEMA_VERSION}")
        expected = {"command", "config", "payload", "seed", "schema_version", "timestamps"}
        if set(data) != expected:
            raise ConfigError(f"report keys {sorted(data)} do not match the schema {sorted(expected)}")
        return cls(**data)


def dumps(record: ReportRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text: str) -> ReportRecord:
    return ReportRecord.from_dict(json.loads(text))


def write_report(record: ReportRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(record))


def read_report(path) -> ReportRecord:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def write_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
