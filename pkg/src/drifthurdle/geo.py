"""Local tangent-plane geometry.

Positions are projected with an equirectangular map about a fixed origin on a
spherical Earth, which is accurate to well below the 50 km window scale over
a region spanning a few degrees. Circle/rectangle intersections are computed
by clipping a regular polygon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

EARTH_RADIUS_KM = 6371.0
N_CIRCLE_VERTICES = 1024


@dataclass(frozen=True)
class Region:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        vals = (self.lon_min, self.lon_max, self.lat_min, self.lat_max)
        if not all(np.isfinite(vals)):
            raise InvalidArgument(f"non-finite region bounds {vals}")
        if not self.lon_min < self.lon_max:
            raise InvalidArgument("region requires lon_min < lon_max")
        if not self.lat_min < self.lat_max:
            raise InvalidArgument("region requires lat_min < lat_max")
        if abs(self.lat_min) > 90 or abs(self.lat_max) > 90:
            raise InvalidArgument("region latitude outside [-90, 90]")

    @classmethod
    def parse(cls, text: str) -> "Region":
        """Build from ``"lon_min,lon_max,lat_min,lat_max"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError as exc:
            raise InvalidArgument(f"cannot parse region {text!r}") from exc
        if len(parts) != 4:
            raise InvalidArgument(f"region needs 4 numbers, got {len(parts)}")
        return cls(*parts)

    @property
    def centroid(self) -> tuple[float, float]:
        return (0.5 * (self.lon_min + self.lon_max), 0.5 * (self.lat_min + self.lat_max))

    def contains(self, lon, lat):
        lon = np.asarray(lon)
        lat = np.asarray(lat)
        return (
            (lon >= self.lon_min) & (lon <= self.lon_max)
            & (lat >= self.lat_min) & (lat <= self.lat_max)
        )

    def local_bounds(self, origin=None) -> tuple[float, float, float, float]:
        """Rectangle ``(x_min, x_max, y_min, y_max)`` in km about ``origin``.

        The equirectangular map sends a lon/lat box to an exact rectangle.
        """
        origin = self.centroid if origin is None else origin
        x0, y0 = project(self.lon_min, self.lat_min, origin)
        x1, y1 = project(self.lon_max, self.lat_max, origin)
        return (float(x0), float(x1), float(y0), float(y1))

    def as_list(self):
        return [self.lon_min, self.lon_max, self.lat_min, self.lat_max]


@dataclass(frozen=True)
class LocalPoint:
    x: float
    y: float
    origin: tuple[float, float]


@dataclass(frozen=True)
class Circle:
    centre: LocalPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgument("circle radius must be positive")


def project(lon, lat, origin):
    """Map degrees to tangent-plane kilometres about ``origin = (lon0, lat0)``.

    Returns ``(x, y)``, scalars or arrays matching the input.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    lon0, lat0 = origin
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat))
            and np.isfinite(lon0) and np.isfinite(lat0)):
        raise InvalidArgument("project() requires finite coordinates")
    scale = EARTH_RADIUS_KM * np.pi / 180.0
    x = scale * np.cos(np.deg2rad(lat0)) * (lon - lon0)
    y = scale * (lat - lat0)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def unproject(x, y, origin):
    """Inverse of :func:`project`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lon0, lat0 = origin
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidArgument("unproject() requires finite coordinates")
    scale = EARTH_RADIUS_KM * np.pi / 180.0
    lon = lon0 + x / (scale * np.cos(np.deg2rad(lat0)))
    lat = lat0 + y / scale
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def project_point(lon, lat, origin) -> LocalPoint:
    x, y = project(lon, lat, origin)
    return LocalPoint(x, y, tuple(origin))


def shoelace_area(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_halfplane(poly, axis, bound, keep_below):
    """One Sutherland-Hodgman pass against ``coord[axis] <= bound`` (or >=)."""
    if len(poly) == 0:
        return poly
    sign = 1.0 if keep_below else -1.0
    d = sign * (bound - poly[:, axis])
    inside = d >= 0
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        p, q = poly[i], poly[j]
        if inside[i]:
            out.append(p)
            if not inside[j]:
                out.append(p + (q - p) * (d[i] / (d[i] - d[j])))
        elif inside[j]:
            out.append(p + (q - p) * (d[i] / (d[i] - d[j])))
    return np.array(out) if out else np.empty((0, 2))


def circle_polygon(cx, cy, radius, n=N_CIRCLE_VERTICES):
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])


def clip_polygon_to_rect(poly, rect):
    x_min, x_max, y_min, y_max = rect
    poly = _clip_halfplane(poly, 0, x_max, True)
    poly = _clip_halfplane(poly, 0, x_min, False)
    poly = _clip_halfplane(poly, 1, y_max, True)
    poly = _clip_halfplane(poly, 1, y_min, False)
    return poly


def clipped_circle_area(circle: Circle, rect) -> float:
    """Area (km^2) of ``circle`` intersected with the rectangle ``rect``.

    ``rect`` is ``(x_min, x_max, y_min, y_max)`` in the circle's local frame.
    The inscribed polygon's area is rescaled by ``pi R^2 / A_polygon`` so an
    unclipped circle returns exactly ``pi R^2``.
    """
    r = circle.radius
    poly = circle_polygon(circle.centre.x, circle.centre.y, r)
    full = shoelace_area(poly)
    clipped = shoelace_area(clip_polygon_to_rect(poly, rect))
    return np.pi * r * r * clipped / full
