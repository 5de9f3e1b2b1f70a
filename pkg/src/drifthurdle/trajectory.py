"""Drifter fixes, in-region segmentation and Lagrangian velocities.

Velocities are complex, ``z = u + i v`` in m/s, with ``u`` eastward and ``v``
northward.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgument, ParseError
from .geo import EARTH_RADIUS_KM, Region

HOURLY = 3600.0


@dataclass
class DrifterRecord:
    """All fixes of one drifter, sorted by time (epoch seconds)."""

    drifter_id: str
    time: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __len__(self):
        return len(self.time)


@dataclass
class TrajectorySegment:
    segment_id: str
    drifter_id: str
    time: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    dt: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    _z: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.time)

    @property
    def velocities(self) -> np.ndarray:
        if self._z is None:
            self._z = velocities(self)
        return self._z


@dataclass
class SegmentReport:
    n_fixes: int = 0
    n_retained: int = 0
    n_outside: int = 0
    n_short: int = 0
    n_segments: int = 0
    n_short_segments: int = 0


def parse_time(text: str) -> float:
    """Epoch seconds from an integer/float string or ISO-8601 (UTC if naive)."""
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        value = float(text)
        if math.isfinite(value):
            return value
    except ValueError:
        pass
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    stamp = datetime.fromisoformat(iso)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def ingest(source, dt: float = HOURLY) -> dict[str, DrifterRecord]:
    """Read a trajectory CSV with header ``id,time,lon,lat[,u,v]``.

    ``source`` may be a path or an open text stream. Returns records keyed by
    drifter id in first-appearance order.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest(fh, dt)

    reader = csv.reader(source)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        return {}
    required = ["id", "time", "lon", "lat"]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"missing columns {missing}", line=1)
    idx = {name: header.index(name) for name in header}
    has_uv = "u" in idx and "v" in idx

    rows: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            did = row[idx["id"]].strip()
            t = parse_time(row[idx["time"]])
            lon = float(row[idx["lon"]])
            lat = float(row[idx["lat"]])
            u = float(row[idx["u"]]) if has_uv else np.nan
            v = float(row[idx["v"]]) if has_uv else np.nan
        except ValueError as exc:
            raise ParseError(f"malformed value ({exc})", line=lineno) from None
        if not did:
            raise ParseError("empty drifter id", line=lineno)
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise ParseError("non-finite position", line=lineno)
        if abs(lat) > 90:
            raise ParseError(f"latitude {lat} outside [-90, 90]", line=lineno)
        rows.setdefault(did, []).append((t, lon, lat, u, v, lineno))

    records = {}
    for did, items in rows.items():
        items.sort(key=lambda r: r[0])
        arr = np.array([r[:5] for r in items], dtype=float)
        dup = np.nonzero(np.diff(arr[:, 0]) == 0)[0]
        if len(dup):
            line = items[dup[0] + 1][5]
            raise DataError(f"line {line}: duplicate timestamp for drifter {did!r}")
        records[did] = DrifterRecord(
            drifter_id=did,
            time=arr[:, 0],
            lon=arr[:, 1],
            lat=arr[:, 2],
            u=arr[:, 3] if has_uv else None,
            v=arr[:, 4] if has_uv else None,
        )
    return records


def segment(record: DrifterRecord, region: Region, dt: float = HOURLY,
            report: SegmentReport | None = None) -> list[TrajectorySegment]:
    """Split one drifter record into in-region runs with regular sampling.

    A new segment starts after any fix outside ``region`` and after any time
    gap above ``1.5 * dt``. Runs shorter than two fixes are dropped (and
    counted in ``report``).
    """
    n = len(record)
    inside = region.contains(record.lon, record.lat)
    gap = np.diff(record.time) > 1.5 * dt
    # a break sits before index j when fix j-1 and fix j cannot share a segment
    brk = np.ones(n, dtype=bool)
    if n > 1:
        brk[1:] = gap | ~inside[:-1] | ~inside[1:]
    segs = []
    counter = 0
    n_short = n_short_segments = 0
    starts = np.nonzero(brk)[0]
    bounds = np.append(starts, n)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if not inside[a]:
            # outside fixes always form single-fix runs of their own
            continue
        if b - a < 2:
            n_short += b - a
            n_short_segments += 1
            continue
        sl = slice(a, b)
        segs.append(TrajectorySegment(
            segment_id=f"{record.drifter_id}#{counter}",
            drifter_id=record.drifter_id,
            time=record.time[sl].copy(),
            lon=record.lon[sl].copy(),
            lat=record.lat[sl].copy(),
            dt=dt,
            u=None if record.u is None else record.u[sl].copy(),
            v=None if record.v is None else record.v[sl].copy(),
        ))
        counter += 1
    if report is not None:
        report.n_fixes += n
        report.n_outside += int(np.count_nonzero(~inside))
        report.n_short += n_short
        report.n_short_segments += n_short_segments
        report.n_retained += sum(len(s) for s in segs)
        report.n_segments += len(segs)
    return segs


def segment_all(records, region: Region, dt: float = HOURLY):
    """Segment every record; returns ``(segments, report)``."""
    report = SegmentReport()
    if isinstance(records, dict):
        records = records.values()
    out = []
    for rec in records:
        out.extend(segment(rec, region, dt, report))
    return out, report


def velocities(seg: TrajectorySegment) -> np.ndarray:
    """Complex velocity (m/s) at every fix of ``seg``.

    Supplied ``u``/``v`` columns are passed through. Otherwise positions are
    differenced: centred over ``2 dt`` inside, one-sided at both ends, with
    the eastward metric taken at each fix's own latitude.
    """
    n = len(seg)
    if n < 2:
        raise InvalidArgument("velocities need a segment of at least 2 fixes")
    if seg.u is not None and seg.v is not None and np.all(np.isfinite(seg.u)) \
            and np.all(np.isfinite(seg.v)):
        return seg.u + 1j * seg.v
    lam = np.unwrap(np.deg2rad(seg.lon))
    phi = np.deg2rad(seg.lat)
    metres = EARTH_RADIUS_KM * 1000.0
    dlam = np.gradient(lam, seg.dt)
    dphi = np.gradient(phi, seg.dt)
    u = metres * np.cos(phi) * dlam
    v = metres * dphi
    return u + 1j * v
