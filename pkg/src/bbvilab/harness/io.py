"""CSV and JSON sidecar writers."""

from __future__ import annotations

import csv
import datetime
import json
import math
from pathlib import Path

import numpy as np


def format_cell(value) -> str:
    """Shortest round-trip text for floats; ``true``/``false`` for booleans."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def write_sidecar(csv_path, payload: dict, deterministic: bool) -> Path:
    """Write ``<csv>.json``; the timestamp is omitted under ``deterministic``."""
    payload = dict(payload)
    if not deterministic:
        payload["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    path = sidecar_path(csv_path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
