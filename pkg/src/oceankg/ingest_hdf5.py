"""Convert a gridded HDF5/netCDF4 SST product to the plain text grid format.

Needs the optional ``h5py`` dependency (``pip install oceankg[hdf5]``).
The input is expected to hold a (time, lat, lon) variable plus 1-d ``lat``
and ``lon`` coordinate variables; masked points use the fill value.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from .data import LAND_SENTINEL

log = logging.getLogger(__name__)


def read_grid(path, variable: str = "sst", lat_name: str = "lat", lon_name: str = "lon",
              stride: int = 1, steps: int | None = None):
    """Load ``variable`` as (cells x time) with missing values set to the land sentinel.

    ``stride`` subsamples the grid (5 on a 1 degree product gives 5 degree cells).
    Returns ``(values, coords)``.
    """
    import h5py

    with h5py.File(path, "r") as fh:
        var = fh[variable]
        lat = np.asarray(fh[lat_name])[::stride]
        lon = np.asarray(fh[lon_name])[::stride]
        cube = np.asarray(var[slice(0, steps), ::stride, ::stride], dtype=np.float64)
        fill = var.attrs.get("_FillValue", var.attrs.get("missing_value"))
        scale = float(np.ravel(var.attrs.get("scale_factor", [1.0]))[0])
        offset = float(np.ravel(var.attrs.get("add_offset", [0.0]))[0])
    bad = ~np.isfinite(cube)
    if fill is not None:
        bad |= cube == np.ravel(fill)[0]
    cube = cube * scale + offset
    cube[bad] = LAND_SENTINEL
    lon = np.where(lon > 180.0, lon - 360.0, lon)
    coords = [(float(a), float(o)) for a in lat for o in lon]
    values = cube.reshape(cube.shape[0], -1).T
    log.info("read %d cells x %d steps from %s", len(coords), cube.shape[0], path)
    return values, coords


def write_grid(values: np.ndarray, coords, path, stamps=None) -> Path:
    """Text grid writer that keeps sentinel values (unlike :func:`write_sst`)."""
    stamps = stamps or [f"t{k:05d}" for k in range(values.shape[1])]
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(["lat", "lon", *stamps]) + "\n")
        for (lat, lon), row in zip(coords, values):
            fh.write(" ".join([f"{lat:g}", f"{lon:g}", *(f"{v:.4f}" for v in row)]) + "\n")
    return path


def main(argv=None):
    ap = argparse.ArgumentParser(description="Convert an HDF5 SST grid to the text grid format.")
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--variable", default="sst")
    ap.add_argument("--lat", default="lat")
    ap.add_argument("--lon", default="lon")
    ap.add_argument("--stride", type=int, default=1)
    ap.add_argument("--steps", type=int, default=None, help="keep only the first N time steps")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    values, coords = read_grid(args.input, args.variable, args.lat, args.lon, args.stride, args.steps)
    write_grid(values, coords, args.output)


if __name__ == "__main__":
    main()
