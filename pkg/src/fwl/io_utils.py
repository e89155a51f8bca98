"""Versioned CSV/JSON artifacts and run manifests.

Every CSV starts with the comment line ``# schema=v1`` followed by a
header row; JSON summaries carry a ``"schema": "v1"`` field.  All writes
go through a temp file and an atomic rename, and the manifest records a
SHA-256 per emitted file so reruns can be compared byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA = "v1"


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_csv(path, fields, rows) -> Path:
    """CSV with the schema comment line; rows is an iterable of tuples."""
    path = Path(path)
    lines = [f"# schema={SCHEMA}"]
    lines.append(",".join(fields))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path):
    """Columns as lists of strings; raises on schema mismatch."""
    path = Path(path)
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# schema={SCHEMA}":
            raise ValueError(f"{path}: schema mismatch (got {first!r})")
        reader = csv.reader(f)
        fields = next(reader)
        cols = {name: [] for name in fields}
        for row in reader:
            for name, v in zip(fields, row):
                cols[name].append(v)
    return cols


def write_json(path, obj) -> Path:
    path = Path(path)
    obj = dict(obj)
    obj.setdefault("schema", SCHEMA)
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
    return path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Ledger of every artifact a run emits, with content hashes."""

    out_dir: Path
    config: dict
    files: dict = field(default_factory=dict)
    complete: bool = False

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.write()  # marks the run as started-but-incomplete

    def add(self, path) -> Path:
        path = Path(path)
        self.files[path.name] = file_sha256(path)
        return path

    def finalize(self):
        self.complete = True
        self.write()

    def write(self):
        write_json(self.out_dir / "manifest.json", {
            "config": self.config,
            "files": self.files,
            "complete": self.complete,
        })
