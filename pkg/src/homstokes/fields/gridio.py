"""Plain-text grid format.

Header lines (``key value...``) followed by a ``data`` line and the samples in
row-major order, one grid row (last axis) per line::

    # homstokes grid
    dim 2
    rank vector
    lead 2
    points_per_axis 16 16
    data
    0.0 0.1 ...
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError
from .periodic import GridSpec, PeriodicField


def format_grid_field(field: PeriodicField, comment: str = "") -> str:
    lines = ["# homstokes grid"]
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines += [f"dim {field.grid.dim}", f"rank {field.rank}",
              "lead " + " ".join(str(n) for n in field.lead_shape),
              "points_per_axis " + " ".join(str(n) for n in field.grid.shape), "data"]
    rows = field.samples.reshape(-1, field.grid.shape[-1])
    lines += [" ".join(repr(float(x)) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_grid_field(path, field: PeriodicField, comment: str = "") -> None:
    Path(path).write_text(format_grid_field(field, comment))


def read_grid_field(path) -> PeriodicField:
    text = Path(path).read_text().splitlines()
    header: dict[str, list[str]] = {}
    i = 0
    while i < len(text):
        line = text[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line == "data":
            break
        key, *vals = line.split()
        header[key] = vals
    else:
        raise DataError(f"{path}: missing data section")
    try:
        dim = int(header["dim"][0])
        lead = tuple(int(x) for x in header.get("lead", []))
        pts = tuple(int(x) for x in header["points_per_axis"])
    except (KeyError, IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed header ({exc})") from None
    values = np.array([float(x) for line in text[i:] for x in line.split()])
    grid = GridSpec(dim, pts)
    shape = lead + grid.shape
    if values.size != int(np.prod(shape)):
        raise DataError(f"{path}: expected {int(np.prod(shape))} values, found {values.size}")
    return PeriodicField(grid, values.reshape(shape))
