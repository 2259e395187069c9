"""Tabular experiment records written as CSV with ``#`` metadata lines."""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

TIMING_COLUMNS = ("wall_time",)


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return obj.item()
    return obj


def config_hash(config: Any) -> str:
    """Short stable digest of a (possibly nested dataclass) configuration."""
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


@dataclass
class ExperimentReport:
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def add(self, **row) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing columns {sorted(missing)}")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path=None, timing: bool = False) -> str:
        """Serialise; wall-clock columns are dropped unless ``timing`` is set so reruns are byte-identical."""
        cols = [c for c in self.columns if timing or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={_fmt(self.metadata[key])}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "ExperimentReport":
        meta: Dict[str, Any] = {}
        lines = Path(path).read_text().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            else:
                body.append(line)
        reader = csv.reader(body)
        cols = next(reader)
        rows = [dict(zip(cols, values)) for values in reader]
        return cls(cols, rows, meta)


