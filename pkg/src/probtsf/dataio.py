"""Wide-CSV dataset files: header ``t,series_0,...,series_{N-1}``, one row per time step."""
from __future__ import annotations

import csv
import math
import os

import numpy as np


class DatasetError(ValueError):
    pass


def series_names(n: int) -> list[str]:
    return [f"series_{i}" for i in range(n)]


def write_csv_dataset(path, data, t=None, names=None) -> None:
    """Write ``data`` of shape ``(n_series, length)``; reals keep 17 significant digits."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, length = data.shape
    t = np.arange(length) if t is None else np.asarray(t)
    names = series_names(n) if names is None else list(names)
    if len(names) != n or len(t) != length:
        raise ValueError("names/t do not match data shape")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *names])
        for j in range(length):
            writer.writerow([_fmt(t[j]), *(_fmt(v) for v in data[:, j])])
    os.replace(tmp, path)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return format(value, ".17g")


def read_csv_dataset(path):
    """Return ``(data, t, names)`` with ``data`` shaped ``(n_series, length)``.

    Rows are counted from 1 at the first data row (the header is row 0).
    """
    if not os.path.exists(path):
        raise DatasetError(f"{path}: no such dataset file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "t":
            raise DatasetError(f"{path}: header must start with 't', got {header[:1]}")
        if len(header) < 2:
            raise DatasetError(f"{path}: header has no series columns")
        seen = set()
        for col, name in enumerate(header):
            if name in seen:
                raise DatasetError(f"{path}: duplicate header {name!r} at column {col + 1}")
            seen.add(name)
        t_vals, rows = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)} (ragged row)"
                )
            values = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, column {col + 1} ({header[col]})"
                    ) from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: non-finite value at row {row_no}, column {col + 1} ({header[col]})")
                values.append(v)
            t_vals.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows, dtype=float).T.copy()
    return data, np.array(t_vals), header[1:]
