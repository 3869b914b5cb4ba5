"""Result tables and their CSV / JSON files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ResultTable:
    experiment: str
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    attachments: dict = field(default_factory=dict)  # file name -> (columns, rows), always CSV

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, schema has {len(self.columns)}")
        self.rows.append(tuple(_plain(v) for v in row))

    def check(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row length does not match the schema")
            for v in row:
                if isinstance(v, float) and not math.isfinite(v):
                    raise ValueError(f"non-finite value in {self.experiment} rows")

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _plain(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def fmt_float(x: float) -> str:
    """17 significant digits, keeping a float marker on integral values."""
    s = format(x, ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits; non-finite floats become null."""
    obj = _plain(obj)
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = "," if indent is None else ","
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, float):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[" + sep.join(pad + dumps(v, indent, _level + 1) for v in obj) + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items())
        return "{" + sep.join(items) + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cell(v) -> str:
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, list):
        return dumps(v)
    return str(v)


def emit(table: ResultTable, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """Write ``<experiment>.<fmt>`` and ``summary.json``; returns the paths written."""
    table.check()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    main = out / f"{table.experiment}.{fmt}"
    if fmt == "csv":
        with open(main, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_cell(v) for v in row])
    elif fmt == "json":
        doc = {
            "experiment": table.experiment,
            "schema": table.columns,
            "rows": [list(r) for r in table.rows],
            "provenance": table.provenance,
        }
        main.write_text(dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    written = [main]
    for name, (cols, rows) in table.attachments.items():
        written.append(write_csv(out / name, cols, rows))
    summ = out / "summary.json"
    summ.write_text(
        dumps({"experiment": table.experiment, "summary": table.summary, "provenance": table.provenance}, indent=1) + "\n"
    )
    return written + [summ]


def write_csv(path: str | Path, columns: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(_plain(v)) for v in row])
    return path


def load_json_table(path: str | Path) -> ResultTable:
    doc = json.loads(Path(path).read_text())
    return ResultTable(doc["experiment"], doc["schema"], [tuple(r) for r in doc["rows"]], {}, doc.get("provenance", {}))
