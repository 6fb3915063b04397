"""Plain-text sample and model files.

Samples are CSV with one point per row.  Lines starting with ``#`` are
comments, and a first row that does not parse as numbers is taken as a column
header.  Models are JSON documents produced by :meth:`FittedModel.to_dict`,
with an optional ``echo`` block recording how they were made.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .estimate import FittedModel


class SampleFormatError(ValueError):
    """A sample file row that cannot be used; ``row`` is the 1-based line number."""

    def __init__(self, row: int, msg: str):
        super().__init__(f"row {row}: {msg}")
        self.row = row


def read_sample_csv(path, d: int | None = None) -> np.ndarray:
    """Read an ``(n, d)`` sample, checking every coordinate lies in ``[0, 1]``.

    Raises ``OSError`` when the file cannot be read and
    :class:`SampleFormatError` for malformed or out-of-range rows.
    """
    rows: list[list[float]] = []
    seen_data = False
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip() or rec[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                if not seen_data and not rows:
                    seen_data = True  # header
                    continue
                raise SampleFormatError(lineno, f"cannot parse {','.join(rec)!r} as numbers") from None
            seen_data = True
            if d is None:
                d = len(vals)
            if len(vals) != d:
                raise SampleFormatError(lineno, f"expected {d} columns, found {len(vals)}")
            if not all(np.isfinite(vals)):
                raise SampleFormatError(lineno, "non-finite value")
            if any(v < 0 or v > 1 for v in vals):
                raise SampleFormatError(lineno, "coordinate outside [0, 1]")
            rows.append(vals)
    if not rows:
        raise SampleFormatError(0, "file holds no data rows")
    return np.asarray(rows, dtype=float)


def write_sample_csv(path, x: np.ndarray, header: dict | None = None) -> None:
    """Write ``x`` to a path or an open text stream, with ``header`` as comment lines."""
    x = np.atleast_2d(np.asarray(x, float))
    if hasattr(path, "write"):
        _write_rows(path, x, header)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, x, header)


def _write_rows(fh, x: np.ndarray, header: dict | None) -> None:
    for key, val in (header or {}).items():
        fh.write(f"# {key}: {val}\n")
    fh.write(",".join(f"x{l + 1}" for l in range(x.shape[1])) + "\n")
    for row in x:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_model(path, model: FittedModel, echo: dict | None = None) -> None:
    data = model.to_dict()
    if echo:
        data["echo"] = echo
    Path(path).write_text(json.dumps(data, indent=1))


def load_model(path) -> FittedModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    return FittedModel.from_dict(data)


__all__ = ["SampleFormatError", "read_sample_csv", "write_sample_csv", "save_model", "load_model"]
