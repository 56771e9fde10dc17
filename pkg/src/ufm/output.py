"""Atomic CSV/JSON writers shared by the Monte Carlo lab and the CLI."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def fmt17(x) -> str:
    """Decimal text with 17 significant digits: round-trips any float64."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt17(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_matrix(path, mat, row_ids=None, col_ids=None) -> None:
    """Wide-format matrix CSV (leading empty header cell + row labels)."""
    n, t = mat.shape
    row_ids = row_ids or [f"r{i}" for i in range(n)]
    col_ids = col_ids or [f"c{j}" for j in range(t)]
    lines = ["," + ",".join(str(c) for c in col_ids)]
    for rid, row in zip(row_ids, mat):
        lines.append(str(rid) + "," + ",".join(fmt17(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
