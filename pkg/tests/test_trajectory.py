import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drifthurdle.errors import DataError, InvalidArgument, ParseError
from drifthurdle.geo import EARTH_RADIUS_KM, Region
from drifthurdle.trajectory import (DrifterRecord, TrajectorySegment, ingest, parse_time, segment,
                                    segment_all, velocities)

REGION = Region(-40.0, -30.0, -56.0, -52.0)


def record(lon, lat, dt=3600.0, did="d1", t0=0.0, times=None):
    lon = np.asarray(lon, dtype=float)
    times = t0 + dt * np.arange(len(lon)) if times is None else np.asarray(times, dtype=float)
    return DrifterRecord(did, times, lon, np.asarray(lat, dtype=float) * np.ones_like(lon))


def seg_from(lon, lat, dt=3600.0, u=None, v=None):
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float) * np.ones_like(lon)
    return TrajectorySegment("s", "d", dt * np.arange(len(lon)), lon, lat, dt, u, v)


def test_header_only_file_is_empty():
    assert ingest(io.StringIO("id,time,lon,lat\n")) == {}


def test_three_rows_one_record():
    text = "id,time,lon,lat\nA,0,-35,-54\nA,3600,-35.1,-54\nA,7200,-35.2,-54\n"
    recs = ingest(io.StringIO(text))
    assert list(recs) == ["A"]
    assert len(recs["A"]) == 3


def test_bad_latitude_names_line():
    text = "id,time,lon,lat\nA,0,-35,-54\nA,3600,-35,95\n"
    with pytest.raises(ParseError) as exc:
        ingest(io.StringIO(text))
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_missing_column_and_duplicate_time():
    with pytest.raises(ParseError):
        ingest(io.StringIO("id,time,lon\nA,0,1\n"))
    with pytest.raises(DataError):
        ingest(io.StringIO("id,time,lon,lat\nA,0,-35,-54\nA,0,-35,-54\n"))


def test_iso_times_and_sorting():
    assert parse_time("1970-01-01T01:00:00Z") == 3600.0
    assert parse_time("7200") == 7200.0
    text = "id,time,lon,lat\nA,1970-01-01T02:00:00,-35,-54\nA,1970-01-01T01:00:00,-35.1,-54\n"
    rec = ingest(io.StringIO(text))["A"]
    assert list(rec.time) == [3600.0, 7200.0]
    assert list(rec.lon) == [-35.1, -35.0]


def test_all_inside_regular_gives_one_segment():
    segs = segment(record(np.linspace(-36, -34, 30), -54), REGION)
    assert len(segs) == 1 and len(segs[0]) == 30


def test_outside_fix_splits_segment():
    lon = np.full(11, -35.0)
    lon[5] = -20.0
    segs = segment(record(lon, -54), REGION)
    assert [len(s) for s in segs] == [5, 5]
    assert all(-20.0 not in s.lon for s in segs)


def test_time_gap_splits_segment():
    times = np.r_[np.arange(5), np.arange(7, 12)] * 3600.0
    segs = segment(record(np.full(10, -35.0), -54, times=times), REGION)
    assert [len(s) for s in segs] == [5, 5]


@given(st.lists(st.booleans(), min_size=1, max_size=80), st.integers(0, 2 ** 32 - 1))
def test_segmentation_is_a_partition(inside, seed):
    rng = np.random.default_rng(seed)
    n = len(inside)
    lon = np.where(inside, -35.0, -20.0) + rng.uniform(-0.1, 0.1, n)
    steps = rng.choice([3600.0, 3600.0, 3600.0, 9000.0], size=n)
    rec = record(lon, -54, times=np.cumsum(steps))
    segs, rep = segment_all([rec], REGION)
    kept = np.concatenate([s.time for s in segs]) if segs else np.empty(0)
    assert len(np.unique(kept)) == len(kept)
    assert rep.n_fixes == n
    assert rep.n_retained + rep.n_outside + rep.n_short == n
    assert rep.n_outside == n - sum(inside)


def test_conservation_over_many_trajectories():
    rng = np.random.default_rng(7)
    recs = []
    for i in range(1294):
        n = int(rng.integers(122, 8798)) if i % 97 == 0 else int(rng.integers(122, 400))
        if i == 0:
            n = 122
        elif i == 1:
            n = 8797
        lon = -35 + np.cumsum(rng.normal(scale=0.05, size=n))
        lat = -54 + np.cumsum(rng.normal(scale=0.03, size=n))
        recs.append(record(lon, lat, did=f"d{i}"))
    segs, rep = segment_all(recs, REGION)
    total = sum(len(r) for r in recs)
    assert rep.n_fixes == total
    assert sum(len(s) for s in segs) + rep.n_outside + rep.n_short == total


def test_eastward_velocity():
    deg_per_hour = 3.6 / (EARTH_RADIUS_KM * np.pi / 180.0)
    seg = seg_from(-35 + deg_per_hour * np.arange(8), 0.0)
    z = velocities(seg)
    np.testing.assert_allclose(z.real[1:-1], 1.0, rtol=1e-12)
    np.testing.assert_allclose(z.imag, 0.0, atol=1e-12)


def test_stationary_drifter_and_passthrough():
    assert np.all(velocities(seg_from(np.full(5, -35.0), -54)) == 0)
    u = np.array([0.1, 0.2, 0.3])
    v = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(velocities(seg_from([-35, -35, -35], -54, u=u, v=v)), u + 1j * v)


def test_single_fix_rejected():
    with pytest.raises(InvalidArgument):
        velocities(seg_from([-35.0], -54))


@given(st.integers(0, 2 ** 32 - 1))
def test_time_reversal_negates_interior_velocity(seed):
    rng = np.random.default_rng(seed)
    lon = -35 + np.cumsum(rng.normal(scale=0.02, size=20))
    lat = -54 + np.cumsum(rng.normal(scale=0.02, size=20))
    fwd = velocities(TrajectorySegment("a", "d", 3600.0 * np.arange(20), lon, lat, 3600.0))
    rev = velocities(TrajectorySegment("b", "d", 3600.0 * np.arange(20), lon[::-1], lat[::-1], 3600.0))
    np.testing.assert_allclose(rev[::-1][1:-1], -fwd[1:-1], atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_speed_invariant_under_rotation(u, v):
    a = velocities(seg_from([-35, -35], -54, u=np.array([u, u]), v=np.array([v, v])))
    b = velocities(seg_from([-35, -35], -54, u=np.array([-v, -v]), v=np.array([u, u])))
    np.testing.assert_allclose(np.abs(a), np.abs(b), rtol=1e-12)
