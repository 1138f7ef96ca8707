"""SST grid files, chronological splits and sliding windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDatasetError, InsufficientDataError, ParseError

log = logging.getLogger(__name__)

LAND_SENTINEL = -9999.0


@dataclass
class SSTMatrix:
    """N regions x T time steps; ``offset`` is the index of column 0 in the full record."""

    values: np.ndarray
    region_ids: list[str]
    timestamps: list[str]
    offset: int = 0
    coords: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("SST values must be a 2-d matrix")
        if self.values.shape[0] != len(self.region_ids) or self.values.shape[1] != len(self.timestamps):
            raise ValueError("SST matrix shape does not match region ids / timestamps")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("SST matrix contains missing values")
        if not self.coords:
            self.coords = [parse_region_id(r) for r in self.region_ids]

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def time_slice(self, start: int, stop: int) -> SSTMatrix:
        return SSTMatrix(
            self.values[:, start:stop], list(self.region_ids), self.timestamps[start:stop],
            self.offset + start, list(self.coords),
        )

    def regions(self, ids: Sequence[str]) -> SSTMatrix:
        index = {r: i for i, r in enumerate(self.region_ids)}
        rows = [index[r] for r in ids]
        return SSTMatrix(
            self.values[rows], list(ids), list(self.timestamps), self.offset,
            [self.coords[i] for i in rows],
        )

    def region_means(self) -> dict[str, float]:
        return {r: float(v) for r, v in zip(self.region_ids, self.values.mean(axis=1))}


def format_region_id(lat: float, lon: float) -> str:
    return f"{lat:g}_{lon:g}"


def parse_region_id(rid: str) -> tuple[float, float]:
    try:
        lat, lon = rid.split("_")
        return float(lat), float(lon)
    except ValueError:
        return (float("nan"), float("nan"))


def _interpolate_gaps(row: np.ndarray, valid: np.ndarray) -> np.ndarray:
    if valid.all():
        return row
    t = np.arange(len(row))
    return np.interp(t, t[valid], row[valid])


def ingest_sst(path, min_coverage: float = 0.9, sentinel: float = LAND_SENTINEL) -> SSTMatrix:
    """Read a whitespace SST grid file and drop land and poorly covered cells.

    A cell is kept when at least ``min_coverage`` of its values are valid; the
    remaining gaps are filled by linear interpolation in time.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 3 or header[:2] != ["lat", "lon"]:
            raise ParseError(path, 1, "header must start with 'lat lon' followed by timestamps")
        timestamps = header[2:]
        ids, coords, rows, dropped = [], [], [], 0
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != len(header):
                raise ParseError(path, line_no, f"expected {len(header)} fields, got {len(parts)}")
            try:
                nums = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            lat, lon, series = nums[0], nums[1], nums[2:]
            valid = np.isfinite(series) & (series != sentinel)
            if valid.mean() < min_coverage or not valid.any():
                dropped += 1
                continue
            ids.append(format_region_id(lat, lon))
            coords.append((float(lat), float(lon)))
            rows.append(_interpolate_gaps(series, valid))
    if not rows:
        raise EmptyDatasetError(f"no ocean cells with coverage >= {min_coverage} in {path}")
    log.info("ingested %d cells (%d dropped) x %d steps from %s", len(rows), dropped, len(timestamps), path)
    return SSTMatrix(np.array(rows), ids, timestamps, 0, coords)


def write_sst(data: SSTMatrix, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(["lat", "lon", *data.timestamps]) + "\n")
        for (lat, lon), row in zip(data.coords, data.values):
            fh.write(" ".join([f"{lat:g}", f"{lon:g}", *(repr(float(v)) for v in row)]) + "\n")
    return path


def split_lengths(total: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor the train and validation shares; the remainder goes to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = int(np.floor(total * ratios[0] + 1e-9))
    n_val = int(np.floor(total * ratios[1] + 1e-9))
    return n_train, n_val, total - n_train - n_val


def chrono_split(
    data: SSTMatrix,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    min_length: int | None = None,
) -> tuple[SSTMatrix, SSTMatrix, SSTMatrix]:
    """Contiguous train < val < test segments."""
    n_train, n_val, n_test = split_lengths(data.n_steps, ratios)
    if min_length is not None:
        for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
            if n < min_length:
                raise InsufficientDataError(
                    f"{name} segment has {n} steps, needs at least {min_length} (lookback + horizon)"
                )
    return (
        data.time_slice(0, n_train),
        data.time_slice(n_train, n_train + n_val),
        data.time_slice(n_train + n_val, data.n_steps),
    )


@dataclass
class Windows:
    inputs: np.ndarray    # M x T
    targets: np.ndarray   # M x tau
    region: np.ndarray    # M, row index into the source matrix
    start: np.ndarray     # M, absolute index of the first input step

    def __len__(self):
        return len(self.region)


def make_windows(data: SSTMatrix, lookback: int, horizon: int) -> Windows:
    """Every (input, target) pair that fits inside ``data``, region-major order."""
    n = data.n_steps - lookback - horizon + 1
    if n < 1:
        raise InsufficientDataError(
            f"segment of {data.n_steps} steps cannot hold lookback {lookback} + horizon {horizon}"
        )
    starts = np.arange(n)
    idx_in = starts[:, None] + np.arange(lookback)
    idx_out = starts[:, None] + lookback + np.arange(horizon)
    inputs = data.values[:, idx_in].reshape(-1, lookback)
    targets = data.values[:, idx_out].reshape(-1, horizon)
    region = np.repeat(np.arange(data.n_regions), n)
    start = np.tile(starts, data.n_regions) + data.offset
    return Windows(inputs, targets, region, start)
