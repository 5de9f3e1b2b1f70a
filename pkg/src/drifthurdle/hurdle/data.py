"""Hurdle datasets: site-by-time panels of presence, positive response and covariates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import DataError, InvalidArgument, ParseError


@dataclass(frozen=True)
class Standardizer:
    """Column means and population SDs of a covariate matrix."""

    names: tuple[str, ...]
    mean: tuple[float, ...]
    sd: tuple[float, ...]

    @classmethod
    def fit(cls, columns, names=None):
        cols = np.asarray(columns, dtype=float)
        cols = cols.reshape(-1, cols.shape[-1])
        cols = cols[np.all(np.isfinite(cols), axis=1)]
        names = tuple(names) if names is not None else tuple(f"cov_{j + 1}" for j in range(cols.shape[1]))
        mean = cols.mean(axis=0)
        sd = cols.std(axis=0)  # population (1/n) SD
        for name, s in zip(names, sd):
            if not s > 0:
                raise DataError(f"covariate {name!r} has zero variance and cannot be standardized")
        return cls(names, tuple(float(v) for v in mean), tuple(float(v) for v in sd))

    def apply(self, columns, names=None):
        cols = np.asarray(columns, dtype=float)
        if cols.shape[-1] != len(self.mean):
            raise InvalidArgument(
                f"expected {len(self.mean)} covariates for this transform, got {cols.shape[-1]}")
        if names is not None and tuple(names) != self.names:
            raise InvalidArgument(f"covariate names {tuple(names)} do not match transform {self.names}")
        return (cols - np.asarray(self.mean)) / np.asarray(self.sd)

    def to_dict(self):
        return {"names": list(self.names), "mean": list(self.mean), "sd": list(self.sd)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), tuple(d["mean"]), tuple(d["sd"]))


def standardize(columns, names=None):
    """Column-wise ``(x - mean) / sd`` with the population SD.

    Returns ``(standardized, transform)``; the transform is reused at
    prediction time via :meth:`Standardizer.apply`.
    """
    tr = Standardizer.fit(columns, names)
    return tr.apply(columns), tr


@dataclass
class Dataset:
    """Balanced site-by-time panel.

    ``z`` and ``y`` have shape ``(n, T)``; ``y`` is NaN wherever ``z`` is not 1.
    ``covariates`` has shape ``(n, T, p)``. ``observed`` marks (site, time)
    cells that carry data; unobserved cells contribute no likelihood.
    """

    site_ids: list[str]
    coords: np.ndarray  # (n, 2) lon/lat or planar x/y
    times: np.ndarray  # (T,) integer labels
    z: np.ndarray
    y: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    observed: np.ndarray | None = None
    transform: Standardizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, T = self.z.shape
        if self.observed is None:
            self.observed = np.ones((n, T), dtype=bool)
        if self.covariates.ndim == 2:
            self.covariates = self.covariates[:, :, None]
        if self.covariates.shape[:2] != (n, T):
            raise InvalidArgument("covariates must have shape (n, T, p)")
        if not self.covariate_names:
            self.covariate_names = tuple(f"cov_{j + 1}" for j in range(self.covariates.shape[2]))
        zo = self.z[self.observed]
        if not np.all((zo == 0) | (zo == 1)):
            raise DataError("z must be 0 or 1")
        pos = self.observed & (self.z == 1)
        if np.any(~np.isfinite(self.y[pos])) or np.any(self.y[pos] <= 0):
            raise DataError("y must be positive and present wherever z = 1")
        if np.any(np.isfinite(self.y[~pos])):
            raise DataError("y must be absent wherever z = 0")
        if not np.all(np.isfinite(self.covariates[self.observed])):
            raise DataError("covariates must be finite")

    @property
    def n_sites(self):
        return self.z.shape[0]

    @property
    def n_times(self):
        return self.z.shape[1]

    @property
    def n_covariates(self):
        return self.covariates.shape[2]

    def response(self):
        """``z * y`` with zeros where ``z = 0`` and NaN where unobserved."""
        out = np.where(self.z == 1, self.y, 0.0)
        return np.where(self.observed, out, np.nan)

    def standardized(self, transform: Standardizer | None = None) -> "Dataset":
        """Copy with covariates standardized (fitted here unless ``transform`` is given)."""
        if self.transform is not None:
            raise InvalidArgument("dataset covariates are already standardized")
        if self.n_covariates == 0:
            return replace(self)
        if transform is None:
            transform = Standardizer.fit(self.covariates[self.observed], self.covariate_names)
        cov = transform.apply(self.covariates, self.covariate_names)
        cov = np.where(self.observed[:, :, None], cov, 0.0)
        return replace(self, covariates=cov, transform=transform)


def aggregate_time(data: Dataset) -> Dataset:
    """Average covariates and ``z * y`` over time at each site.

    The result has ``T = 1``; ``z`` is 1 wherever the averaged response is
    positive. Sites never observed are dropped.
    """
    obs = data.observed
    count = obs.sum(axis=1)
    keep = count > 0
    resp = np.where(obs, data.response(), 0.0).sum(axis=1)[keep] / count[keep]
    cov = np.where(obs[:, :, None], data.covariates, 0.0).sum(axis=1)[keep] / count[keep, None]
    z = (resp > 0).astype(int)
    y = np.where(z == 1, resp, np.nan)
    return Dataset(
        site_ids=[s for s, k in zip(data.site_ids, keep) if k],
        coords=data.coords[keep],
        times=np.array([0]),
        z=z[:, None],
        y=y[:, None],
        covariates=cov[:, None, :],
        covariate_names=data.covariate_names,
        transform=data.transform,
        meta=dict(data.meta, aggregated="time"),
    )


def aggregate_cells(lon, lat, values, dlon, dlat, origin=(0.0, 0.0), reducer=np.mean):
    """Reduce scattered observations within regular lon/lat cells.

    Parameters
    ----------
    lon, lat : array_like
        Observation positions.
    values : array_like
        Shape ``(N,)`` or ``(N, k)``; NaN entries are ignored per column.
    dlon, dlat : float
        Cell size. Cell edges sit at ``origin + j * size``.

    Returns
    -------
    cell_lon, cell_lat, reduced : ndarray
        Cell centres and reduced values for every non-empty cell, ordered
        by (row, column).
    """
    if dlon <= 0 or dlat <= 0:
        raise InvalidArgument("cell size must be positive")
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    vals = np.asarray(values, dtype=float)
    squeeze = vals.ndim == 1
    vals = vals.reshape(len(lon), -1)
    col = np.floor((lon - origin[0]) / dlon).astype(np.int64)
    row = np.floor((lat - origin[1]) / dlat).astype(np.int64)
    keys, inverse = np.unique(np.stack([row, col], axis=1), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    out = np.full((len(keys), vals.shape[1]), np.nan)
    for g in range(len(keys)):
        block = vals[inverse == g]
        for j in range(vals.shape[1]):
            v = block[:, j]
            v = v[np.isfinite(v)]
            if len(v):
                out[g, j] = reducer(v)
    cell_lon = origin[0] + (keys[:, 1] + 0.5) * dlon
    cell_lat = origin[1] + (keys[:, 0] + 0.5) * dlat
    return cell_lon, cell_lat, out[:, 0] if squeeze else out


DATASET_HEADER = ("site_id", "lon", "lat", "t", "z", "y")


def write_dataset(data: Dataset, path):
    """Write the long-format CSV ``site_id,lon,lat,t,z,y,cov_1..cov_p``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER + tuple(data.covariate_names))
        for i, sid in enumerate(data.site_ids):
            for j, t in enumerate(data.times):
                if not data.observed[i, j]:
                    continue
                y = data.y[i, j]
                w.writerow([sid, repr(float(data.coords[i, 0])), repr(float(data.coords[i, 1])),
                            int(t), int(data.z[i, j]), "" if not np.isfinite(y) else repr(float(y))]
                           + [repr(float(c)) for c in data.covariates[i, j]])


def read_dataset(path) -> Dataset:
    """Read a long-format dataset CSV into a (possibly unbalanced) panel."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty dataset file", line=1) from None
        if tuple(header[:6]) != DATASET_HEADER:
            raise ParseError(f"header must start with {','.join(DATASET_HEADER)}", line=1)
        cov_names = tuple(header[6:])
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                sid = row[0].strip()
                lon, lat = float(row[1]), float(row[2])
                t = int(row[3])
                z = int(row[4])
                y = float(row[5]) if row[5].strip() not in ("", "NA") else math.nan
                cov = [float(c) for c in row[6:]]
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", line=lineno) from None
            if z not in (0, 1):
                raise ParseError(f"z must be 0 or 1, got {z}", line=lineno)
            if z == 1 and not (y > 0 and math.isfinite(y)):
                raise ParseError("y must be positive where z = 1", line=lineno)
            if z == 0 and not math.isnan(y):
                raise ParseError("y must be empty where z = 0", line=lineno)
            rows.append((sid, lon, lat, t, z, y, cov, lineno))
    if not rows:
        raise DataError("dataset has no observations")
    sites: dict[str, tuple] = {}
    for sid, lon, lat, *_rest, lineno in rows:
        if sid in sites and sites[sid] != (lon, lat):
            raise DataError(f"line {lineno}: site {sid!r} has inconsistent coordinates")
        sites.setdefault(sid, (lon, lat))
    site_ids = list(sites)
    sidx = {s: i for i, s in enumerate(site_ids)}
    times = np.array(sorted({r[3] for r in rows}))
    tidx = {int(t): j for j, t in enumerate(times)}
    n, T, p = len(site_ids), len(times), len(cov_names)
    z = np.zeros((n, T), dtype=int)
    y = np.full((n, T), np.nan)
    cov = np.zeros((n, T, p))
    observed = np.zeros((n, T), dtype=bool)
    for sid, _lon, _lat, t, zz, yy, cc, lineno in rows:
        i, j = sidx[sid], tidx[t]
        if observed[i, j]:
            raise DataError(f"line {lineno}: duplicate row for site {sid!r} at t={t}")
        observed[i, j] = True
        z[i, j] = zz
        y[i, j] = yy
        cov[i, j] = cc
    return Dataset(site_ids, np.array([sites[s] for s in site_ids], dtype=float), times,
                   z, y, cov, cov_names, observed, meta={"source": str(Path(path))})
