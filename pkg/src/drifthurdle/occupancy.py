"""Window statistics of drifter occupancy.

Residence time and mass flux are evaluated over a lattice of circles with an
edge correction ``pi R^2 / clipped area``; density is evaluated over
graticule cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import InvalidArgument
from .geo import EARTH_RADIUS_KM, Circle, LocalPoint, Region, clipped_circle_area, project, unproject

DJF = (12, 1, 2)


@dataclass
class CircleGrid:
    region: Region
    origin: tuple[float, float]
    x: np.ndarray
    y: np.ndarray
    radius: float
    clipped_area: np.ndarray
    shape: tuple[int, int]  # (n_y, n_x); centres are stored row-major in y

    @classmethod
    def from_region(cls, region: Region, n_x: int = 20, n_y: int = 25,
                    radius_km: float = 50.0) -> "CircleGrid":
        """Equidistant ``n_x`` by ``n_y`` centres spanning the region edge to edge."""
        if n_x < 1 or n_y < 1:
            raise InvalidArgument("circle grid needs at least one centre per axis")
        origin = region.centroid
        rect = region.local_bounds(origin)
        xs = np.linspace(rect[0], rect[1], n_x) if n_x > 1 else np.array([0.5 * (rect[0] + rect[1])])
        ys = np.linspace(rect[2], rect[3], n_y) if n_y > 1 else np.array([0.5 * (rect[2] + rect[3])])
        gx, gy = np.meshgrid(xs, ys)
        x = gx.ravel()
        y = gy.ravel()
        area = np.array([
            clipped_circle_area(Circle(LocalPoint(cx, cy, origin), radius_km), rect)
            for cx, cy in zip(x, y)
        ])
        return cls(region, origin, x, y, float(radius_km), area, (n_y, n_x))

    def __len__(self):
        return len(self.x)

    @property
    def correction(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.clipped_area > 0, np.pi * self.radius ** 2 / self.clipped_area, np.inf)

    @property
    def lonlat(self):
        return unproject(self.x, self.y, self.origin)


@dataclass
class CellGrid:
    """Graticule cells tiling a region; the last row/column may be partial."""

    region: Region
    dlon: float
    dlat: float
    lon_edges: np.ndarray
    lat_edges: np.ndarray

    @classmethod
    def from_region(cls, region: Region, dlon: float = 0.25, dlat: float = 0.25) -> "CellGrid":
        if dlon <= 0 or dlat <= 0:
            raise InvalidArgument("cell size must be positive")
        return cls(region, dlon, dlat, _edges(region.lon_min, region.lon_max, dlon),
                   _edges(region.lat_min, region.lat_max, dlat))

    @property
    def shape(self):
        return (len(self.lat_edges) - 1, len(self.lon_edges) - 1)

    @property
    def centres(self):
        lon = 0.5 * (self.lon_edges[:-1] + self.lon_edges[1:])
        lat = 0.5 * (self.lat_edges[:-1] + self.lat_edges[1:])
        return lon, lat

    @property
    def area(self) -> np.ndarray:
        """Cell areas in km^2, each in a tangent plane about its own centre."""
        scale = EARTH_RADIUS_KM * np.pi / 180.0
        _, lat_c = self.centres
        width = np.diff(self.lon_edges)
        height = np.diff(self.lat_edges)
        return scale ** 2 * np.outer(height * np.cos(np.deg2rad(lat_c)), width)

    def locate(self, lon, lat):
        """Row/column index of each point, or ``-1`` when outside the region."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        ny, nx = self.shape
        col = np.clip(np.searchsorted(self.lon_edges, lon, side="right") - 1, 0, nx - 1)
        row = np.clip(np.searchsorted(self.lat_edges, lat, side="right") - 1, 0, ny - 1)
        inside = self.region.contains(lon, lat)
        return np.where(inside, row, -1), np.where(inside, col, -1)


def _edges(lo, hi, step):
    count = int(np.ceil((hi - lo) / step - 1e-9))
    edges = lo + step * np.arange(count + 1)
    edges[-1] = hi
    return edges


def _runs(mask):
    """``(start, length)`` of each maximal run of True along a 1-D mask."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts, ends - starts


def circle_runs(segments, grid: CircleGrid):
    """Run lengths (in fixes) of consecutive in-circle fixes, per circle.

    Returns a list with one integer array per circle.
    """
    runs = [[] for _ in range(len(grid))]
    r2 = grid.radius ** 2
    for seg in segments:
        sx, sy = project(seg.lon, seg.lat, grid.origin)
        sx = np.atleast_1d(sx)
        sy = np.atleast_1d(sy)
        # bounding-box prefilter keeps the distance matrix small
        near = np.flatnonzero(
            (grid.x >= sx.min() - grid.radius) & (grid.x <= sx.max() + grid.radius)
            & (grid.y >= sy.min() - grid.radius) & (grid.y <= sy.max() + grid.radius)
        )
        if len(near) == 0:
            continue
        d2 = (sx[:, None] - grid.x[near]) ** 2 + (sy[:, None] - grid.y[near]) ** 2
        inside = d2 <= r2
        for col in np.flatnonzero(inside.any(axis=0)):
            _, lengths = _runs(inside[:, col])
            runs[near[col]].extend(lengths.tolist())
    return [np.asarray(r, dtype=int) for r in runs]


def residence_time(segments, grid: CircleGrid, per_km2: bool = False) -> np.ndarray:
    """Edge-corrected median consecutive dwell time per circle, in minutes.

    A run of ``L`` fixes lasts ``(L - 1) dt``; single-fix runs count ``dt / 2``.
    Circles that no drifter entered are NaN. With ``per_km2`` the value is
    divided by the full circle area.
    """
    segments = list(segments)
    if not segments:
        raise InvalidArgument("residence_time needs at least one segment")
    dt = segments[0].dt
    if any(s.dt != dt for s in segments):
        raise InvalidArgument("segments must share one sampling interval")
    out = np.full(len(grid), np.nan)
    for i, lengths in enumerate(circle_runs(segments, grid)):
        if len(lengths) == 0:
            continue
        dur = np.where(lengths > 1, (lengths - 1) * dt, 0.5 * dt)
        out[i] = np.median(dur) / 60.0
    out = out * grid.correction
    if per_km2:
        out = out / (np.pi * grid.radius ** 2)
    return out


def mass_flux(segments, grid: CircleGrid, total_period: float) -> np.ndarray:
    """Drifter runs through each circle per year per km^2 of clipped area."""
    if not total_period > 0:
        raise InvalidArgument("total_period must be positive")
    counts = np.array([len(r) for r in circle_runs(segments, grid)], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        flux = counts / (total_period * grid.clipped_area)
    return np.where(grid.clipped_area > 0, flux, np.nan)


def drifter_density(fixes, grid: CellGrid, dt: float = 3600.0) -> np.ndarray:
    """Drifter-hours per km^2 in each cell, shape ``grid.shape``.

    ``fixes`` is an iterable of objects with ``lon``/``lat`` arrays (records
    or segments); every in-region fix contributes ``dt`` seconds.
    """
    hours = np.zeros(grid.shape)
    for item in fixes:
        row, col = grid.locate(item.lon, item.lat)
        ok = row >= 0
        np.add.at(hours, (row[ok], col[ok]), dt / 3600.0)
    return hours / grid.area


def _months(times):
    return np.array([datetime.fromtimestamp(t, tz=timezone.utc).month for t in times], dtype=int)


def surface_speed_samples(segments, month_filter=DJF):
    """``(lon, lat, speed)`` arrays for fixes whose UTC month is in the filter.

    An empty filter keeps every fix.
    """
    lon, lat, speed = [], [], []
    months = set(month_filter or ())
    for seg in segments:
        keep = np.ones(len(seg), dtype=bool)
        if months:
            keep = np.isin(_months(seg.time), list(months))
        if not keep.any():
            continue
        lon.append(seg.lon[keep])
        lat.append(seg.lat[keep])
        speed.append(np.abs(seg.velocities[keep]))
    if not lon:
        return np.empty(0), np.empty(0), np.empty(0)
    return np.concatenate(lon), np.concatenate(lat), np.concatenate(speed)
