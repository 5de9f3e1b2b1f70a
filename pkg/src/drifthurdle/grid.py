"""Regular lon/lat rasters and point-sample tables as CSV with JSON sidecars."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgument, ParseError
from .geo import Region
from .occupancy import CellGrid

GRID_HEADER = ("lon", "lat", "value")


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_sidecar(path, variable, units="", region=None, res=None, command="", params=None,
                  input_sha256=None, **extra):
    """JSON metadata next to ``path`` (as ``<name>.json``), with sorted keys."""
    meta = {
        "variable": variable,
        "units": units,
        "region": None if region is None else region.as_list(),
        "res": res,
        "command": command,
        "params": params or {},
        "input_sha256": input_sha256,
    }
    meta.update(extra)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def read_sidecar(path) -> dict:
    with open(sidecar_path(path), encoding="utf-8") as fh:
        return json.load(fh)


def _fmt(v) -> str:
    v = float(v)
    return "NA" if math.isnan(v) else repr(v)


@dataclass
class GridField:
    """Values at the centres of a regular lon/lat raster, shape ``(n_lat, n_lon)``.

    Rows run south to north and columns west to east; the last row/column
    may be a partial cell. Missing values are NaN.
    """

    region: Region
    res: float
    values: np.ndarray
    variable: str = "value"
    units: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.cells.shape
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size != shape[0] * shape[1]:
            raise InvalidArgument(
                f"grid needs {shape[0] * shape[1]} values, got {self.values.size}")
        self.values = self.values.reshape(shape)

    @property
    def cells(self) -> CellGrid:
        return CellGrid.from_region(self.region, self.res, self.res)

    def points(self):
        lon, lat = self.cells.centres
        glon, glat = np.meshgrid(lon, lat)
        return glon.ravel(), glat.ravel()

    def write(self, path, command="", params=None, input_sha256=None):
        lon, lat = self.points()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_HEADER)
            for a, b, v in zip(lon, lat, self.values.ravel()):
                w.writerow([repr(float(a)), repr(float(b)), _fmt(v)])
        write_sidecar(path, self.variable, self.units, self.region, self.res, command,
                      params, input_sha256, shape=list(self.values.shape))

    @classmethod
    def read(cls, path) -> "GridField":
        meta = read_sidecar(path)
        if meta.get("region") is None or meta.get("res") is None:
            raise DataError(f"{path}: sidecar lacks region/res; not a grid")
        region = Region(*meta["region"])
        got_lon, got_lat, values = read_samples(path)
        grid = cls(region, float(meta["res"]), values, meta.get("variable", "value"),
                   meta.get("units", ""), meta)
        lon, lat = grid.points()
        if len(got_lon) != len(lon) or not (np.allclose(got_lon, lon) and np.allclose(got_lat, lat)):
            raise DataError(f"{path}: coordinates do not match the sidecar grid")
        return grid


def write_samples(path, lon, lat, value, variable="value", units="", region=None, command="",
                  params=None, input_sha256=None):
    """Scattered ``lon,lat,value`` rows plus a sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for a, b, v in zip(lon, lat, value):
            w.writerow([repr(float(a)), repr(float(b)), _fmt(v)])
    write_sidecar(path, variable, units, region, None, command, params, input_sha256,
                  count=int(len(lon)))


def read_samples(path):
    """``(lon, lat, value)`` arrays from a ``lon,lat,value`` CSV (``NA`` becomes NaN)."""
    lon, lat, val = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty samples file", line=1) from None
        if tuple(header[:3]) != GRID_HEADER:
            raise ParseError("header must be lon,lat,value", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise ParseError("expected 3 fields", line=lineno)
            try:
                lon.append(float(row[0]))
                lat.append(float(row[1]))
                val.append(math.nan if row[2].strip() in ("NA", "") else float(row[2]))
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", line=lineno) from None
    return np.array(lon), np.array(lat), np.array(val)
