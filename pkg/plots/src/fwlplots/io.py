"""Readers for the versioned artifact formats (schema v1).

This package consumes the simulator's CSV/JSON files only; it never
imports the simulation code.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SCHEMA = "v1"


class SchemaError(ValueError):
    pass


def read_csv(path) -> dict[str, np.ndarray]:
    """Numeric columns of a schema-v1 CSV; raises on mismatch or no rows."""
    path = Path(path)
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# schema={SCHEMA}":
            raise SchemaError(f"{path}: expected '# schema={SCHEMA}', got {first!r}")
        reader = csv.reader(f)
        try:
            fields = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row")
        rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    cols = {}
    for i, name in enumerate(fields):
        vals = [row[i] for row in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return cols


def read_json(path) -> dict:
    path = Path(path)
    obj = json.loads(path.read_text())
    if obj.get("schema") != SCHEMA:
        raise SchemaError(f"{path}: schema mismatch (got {obj.get('schema')!r})")
    return obj
