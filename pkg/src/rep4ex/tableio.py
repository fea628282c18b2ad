"""Deterministic CSV/JSON output: '.' decimal, 17 significant digits, sorted keys."""

from __future__ import annotations

import csv
import json
from pathlib import Path

FLOAT_FMT = ".17g"


def fmt_cell(value) -> str:
    if isinstance(value, float):
        return format(value, FLOAT_FMT)
    if value is None:
        return ""
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_cell(v) for v in row])


def write_sidecar(path: str | Path, payload: dict) -> None:
    """JSON sidecar logging the resolved configuration next to an output file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
