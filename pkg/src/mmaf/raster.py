"""Raster data model, CSV I/O and constant-in-time trend removal."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "RasterError",
    "RasterSeries",
    "DetrendMode",
    "DetrendInfo",
    "load_raster",
    "save_raster",
    "detrend",
]

_GRID_RTOL = 1e-9


class RasterError(ValueError):
    """Raised for malformed raster files or invalid raster contents."""


@dataclass(frozen=True)
class RasterSeries:
    """Regularly sampled space-time field.

    ``values[i, k]`` is the field at time ``t0 + (i + 1) * h_t`` and position
    ``positions[k]``; row 0 is the first observation time.
    """

    values: np.ndarray
    positions: np.ndarray
    t0: float = 0.0
    h_t: float = 1.0
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise RasterError(f"values must be a 2-d matrix, got shape {values.shape}")
        positions = np.array(self.positions, dtype=float).reshape(-1)
        n, p = values.shape
        if n < 1 or p < 1:
            raise RasterError("raster needs at least one time and one position")
        if positions.size != p:
            raise RasterError(f"{positions.size} positions for {p} value columns")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise RasterError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        if not (math.isfinite(self.h_t) and self.h_t > 0):
            raise RasterError(f"h_t must be positive, got {self.h_t}")
        _check_grid(positions)
        values.setflags(write=False)
        positions.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "h_t", float(self.h_t))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        """Grid spacing (1.0 for a single-position raster)."""
        if self.P < 2:
            return 1.0
        return float(self.positions[1] - self.positions[0])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h_t * np.arange(1, self.N + 1)

    def with_values(self, values: np.ndarray, name: str | None = None) -> "RasterSeries":
        return RasterSeries(values, self.positions, self.t0, self.h_t,
                            self.name if name is None else name)


def _check_grid(positions: np.ndarray) -> None:
    if positions.size < 2:
        return
    steps = np.diff(positions)
    if np.any(steps <= 0):
        k = int(np.argmax(steps <= 0)) + 1
        raise RasterError(f"positions not strictly increasing at column {k}")
    scale = max(abs(steps[0]), np.max(np.abs(positions)))
    if np.any(np.abs(steps - steps[0]) > _GRID_RTOL * scale):
        k = int(np.argmax(np.abs(steps - steps[0]) > _GRID_RTOL * scale)) + 1
        raise RasterError(f"non-uniform grid: spacing changes at position column {k}")


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(x))


def save_raster(r: RasterSeries, path) -> Path:
    """Write ``r`` in the raster CSV format (``time,pos_<x1>,...``)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"pos_{_fmt(x)}" for x in r.positions])
        for t, row in zip(r.times, r.values):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
    return path


def _parse_float(text: str, row: int, col: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise RasterError(f"non-numeric cell {text!r} at row {row}, column {col}") from None
    if not math.isfinite(v):
        raise RasterError(f"non-finite cell {text!r} at row {row}, column {col}")
    return v


def load_raster(path, name: str | None = None) -> RasterSeries:
    """Read a raster CSV file.

    Row numbers in error messages are 1-based file lines; column numbers are
    0-based CSV fields (column 0 is the time stamp).
    """
    path = Path(path)
    if not path.exists():
        raise RasterError(f"raster file not found: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RasterError("empty raster file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "time":
        raise RasterError("malformed header at row 1: expected 'time,pos_<x1>,...'")
    positions = []
    for col, h in enumerate(header[1:], start=1):
        if not h.startswith("pos_"):
            raise RasterError(f"malformed header at row 1, column {col}: {h!r}")
        positions.append(_parse_float(h[4:], 1, col))
    p = len(positions)

    times, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 1:
            raise RasterError(f"ragged row {lineno}: expected {p + 1} fields, got {len(row)}")
        times.append(_parse_float(row[0], lineno, 0))
        values.append([_parse_float(c, lineno, k) for k, c in enumerate(row[1:], start=1)])
    if not values:
        raise RasterError("raster file has a header but no data rows")

    times = np.asarray(times)
    steps = np.diff(times)
    if np.any(steps <= 0):
        k = int(np.argmax(steps <= 0)) + 3
        raise RasterError(f"time stamps not strictly increasing at row {k}")
    if times.size > 1:
        h_t = float(steps[0])
        scale = max(abs(h_t), float(np.max(np.abs(times))))
        if np.any(np.abs(steps - h_t) > _GRID_RTOL * scale):
            k = int(np.argmax(np.abs(steps - h_t) > _GRID_RTOL * scale)) + 3
            raise RasterError(f"non-uniform time sampling at row {k}")
    else:
        h_t = 1.0
    try:
        return RasterSeries(np.array(values), np.array(positions), t0=times[0] - h_t,
                            h_t=h_t, name=name if name is not None else path.stem)
    except RasterError as exc:
        raise RasterError(f"{path}: {exc}") from None


class DetrendMode(str, Enum):
    NONE = "none"
    PER_POSITION_MEAN = "per_position_mean"
    GLOBAL_MEAN = "global_mean"


@dataclass(frozen=True)
class DetrendInfo:
    mode: DetrendMode
    removed: list = field(default_factory=list)


def detrend(r: RasterSeries, mode="per_position_mean") -> tuple[RasterSeries, DetrendInfo]:
    """Subtract a constant-in-time mean estimate from every position."""
    mode = DetrendMode(mode)
    if mode is DetrendMode.NONE:
        removed = np.zeros(r.P)
    elif mode is DetrendMode.PER_POSITION_MEAN:
        removed = r.values.mean(axis=0)
    else:
        removed = np.full(r.P, r.values.mean())
    out = r.with_values(r.values - removed[None, :])
    if mode is DetrendMode.PER_POSITION_MEAN:
        # second pass removes the rounding residue of the first
        resid = out.values.mean(axis=0)
        out = r.with_values(out.values - resid[None, :])
        removed = removed + resid
    return out, DetrendInfo(mode, [float(v) for v in removed])
