"""Per-step simulation record and its CSV/JSON serialization."""
from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIGITS = 12


def fmt(x) -> str:
    """12 significant digits; integers and booleans stay integral."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if x == 0.0:
        return "0"
    return f"{x:.{DIGITS}g}"


@dataclass
class SimTrace:
    """Rows of floats under named columns plus a metadata header."""

    columns: tuple[str, ...]
    rows: list[list[float]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    truncated: bool = False

    def append(self, row) -> None:
        row = [float(v) for v in row]
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} values, expected {len(self.columns)}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def data(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(len(self.rows), len(self.columns))

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    # ---------------------------------------------------------------- export
    def to_csv_text(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.meta):
            buf.write(f"# {key} = {_meta_value(self.meta[key])}\n")
        if self.truncated:
            buf.write("# truncated = 1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def to_json_obj(self) -> dict:
        return {
            "meta": {k: _jsonable(v) for k, v in sorted(self.meta.items())},
            "truncated": self.truncated,
            "columns": list(self.columns),
            "rows": [[_json_num(v) for v in r] for r in self.rows],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SimTrace":
        rows = [[float("nan") if v is None else float(v) for v in r] for r in obj["rows"]]
        return cls(tuple(obj["columns"]), rows, dict(obj.get("meta", {})), bool(obj.get("truncated", False)))

    @classmethod
    def from_csv_text(cls, text: str) -> "SimTrace":
        meta = {}
        truncated = False
        lines = text.splitlines()
        body = []
        for ln in lines:
            if ln.startswith("# "):
                k, _, v = ln[2:].partition(" = ")
                if k == "truncated":
                    truncated = v.strip() == "1"
                else:
                    meta[k] = v
            else:
                body.append(ln)
        rd = csv.reader(body)
        header = next(rd)
        rows = [[float(v) for v in r] for r in rd]
        return cls(tuple(header), rows, meta, truncated)


def _meta_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_meta_value(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(fmt(v))
    return v


def _json_num(v: float):
    if np.isnan(v):
        return None
    return float(fmt(v))


def export(obj, path, fmt_: str = "csv", gzip_: bool = False) -> Path:
    """Write a ``SimTrace`` or a summary table (``SimTrace``-shaped) as CSV or JSON."""
    path = Path(path)
    if fmt_ == "csv":
        text = obj.to_csv_text()
    elif fmt_ == "json":
        text = json.dumps(obj.to_json_obj(), indent=1, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown export format {fmt_!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if gzip_:
        if path.suffix != ".gz":
            path = path.with_name(path.name + ".gz")
        # no name, mtime=0: compressed bytes depend on the content only
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(text.encode())
    else:
        path.write_text(text)
    return path


def load(path) -> SimTrace:
    path = Path(path)
    if path.suffix == ".gz":
        text = gzip.decompress(path.read_bytes()).decode()
        inner = path.with_suffix("")
    else:
        text = path.read_text()
        inner = path
    if inner.suffix == ".json":
        return SimTrace.from_json_obj(json.loads(text))
    return SimTrace.from_csv_text(text)
