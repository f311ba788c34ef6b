import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aisgraph.ingest import (AisPoint, ConfigError, Track, featurize, featurize_track, interpolate, parse_ais,
                             read_tracks, segment_tracks, write_tracks)

HEADER = "ship_id,t,lat,lon,sog,cog\n"


def hourly(ship, sogs, t0=0.0, lat=-30.0, lon=110.0):
    return [AisPoint(ship, t0 + i, lat + 0.01 * i, lon, float(s), 45.0) for i, s in enumerate(sogs)]


def test_parse_direct_mapping():
    res = parse_ais(HEADER + "S1,0,-31.9,115.8,12.0,90.0\n")
    assert res.rejects == []
    assert res.points == [AisPoint("S1", 0.0, -31.9, 115.8, 12.0, 90.0)]


def test_parse_reduces_course_and_rejects_negative_speed():
    res = parse_ais(HEADER + "S1,0,0,0,5,370\nS1,1,0,0,-1,10\nS1,2,0,0,x,10\n")
    assert [p.cog for p in res.points] == [10.0]
    assert [r.line for r in res.rejects] == [3, 4]
    assert "negative speed" in res.rejects[0].reason


def test_parse_rejects_out_of_range_positions():
    res = parse_ais(HEADER + "S1,0,91,0,5,1\nS1,1,0,-180,5,1\nS1,2,0,180,5,1\n")
    assert len(res.points) == 1 and res.points[0].lon == 180.0
    assert len(res.rejects) == 2


def test_parse_missing_column_is_config_error():
    with pytest.raises(ConfigError):
        parse_ais("ship_id,t,lat,lon,sog\nS1,0,0,0,1\n")


def test_parse_column_map_and_delimiter():
    text = "mmsi;hour;y;x;speed;heading\n7;1;10;20;3;4\n"
    res = parse_ais(text, {"ship_id": "mmsi", "t": "hour", "lat": "y", "lon": "x", "sog": "speed", "cog": "heading"},
                    delimiter=";")
    assert res.points == [AisPoint("7", 1.0, 10.0, 20.0, 3.0, 4.0)]


def test_segment_keeps_long_track():
    tracks = segment_tracks(hourly("A", [10] * 12))
    assert len(tracks) == 1 and len(tracks[0]) == 12


def test_segment_splits_at_stop():
    sogs = [10] * 24
    sogs[11] = 0
    tracks = segment_tracks(hourly("A", sogs))
    # 0..10 spans 10 h, 12..23 spans 11 h; both qualify
    assert [len(t) for t in tracks] == [11, 12]
    assert all(p.sog > 0 for t in tracks for p in t.points)


def test_segment_drops_short_track():
    assert segment_tracks(hourly("A", [10] * 8)) == []


def test_segment_splits_on_gap():
    pts = hourly("A", [10] * 12) + hourly("A", [10] * 12, t0=15.5)
    tracks = segment_tracks(pts)
    assert [t.track_id for t in tracks] == ["A#0", "A#1"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.2, 5.0), st.booleans()), min_size=1, max_size=60))
def test_segment_invariants_and_idempotence(steps):
    t, pts = 0.0, []
    for dt, stop in steps:
        t += dt
        pts.append(AisPoint("S", t, 0.0, 0.0, 0.0 if stop else 8.0, 10.0))
    tracks = segment_tracks(pts)
    for tr in tracks:
        times = tr.times
        assert np.all(np.diff(times) > 0)
        assert np.all(np.diff(times) <= 3.5)
        assert tr.duration >= 10.0
    again = segment_tracks([p for tr in tracks for p in tr.points])
    assert [tr.points for tr in again] == [tr.points for tr in tracks]


def _track(times, sogs, cogs):
    pts = tuple(AisPoint("A", float(t), -30.0 + 0.1 * t, 110.0, float(s), float(c)) for t, s, c in zip(times, sogs, cogs))
    return Track("A#0", "A", pts)


def test_interpolate_linear_speed():
    out = interpolate(_track([0, 2], [10, 14], [0, 0]))
    assert list(out.times) == [0.0, 1.0, 2.0]
    assert out.points[1].sog == pytest.approx(12.0)


def test_interpolate_course_takes_short_arc():
    out = interpolate(_track([0, 2], [10, 10], [350, 10]))
    c = out.points[1].cog
    assert min(c, 360 - c) == pytest.approx(0.0, abs=1e-9)


def test_interpolate_identity_on_grid():
    tr = _track(range(5), [1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    assert interpolate(tr) == tr


def test_interpolate_preserves_endpoints():
    tr = _track([0.0, 1.7, 3.2, 6.0], [5, 6, 7, 8], [300, 320, 340, 5])
    out = interpolate(tr)
    assert np.all(np.diff(out.times) == 1.0)
    first, last = out.points[0], out.points[-1]
    assert first == tr.points[0]
    assert last.t == 6.0
    assert math.isclose(last.lat, tr.points[-1].lat, rel_tol=1e-12)
    assert math.isclose(last.cog, 5.0, rel_tol=1e-12, abs_tol=1e-9)


@pytest.mark.parametrize("cog, expected", [(0.0, (0.0, 1.0)), (90.0, (1.0, 0.0))])
def test_featurize_axes(cog, expected):
    f = featurize(AisPoint("S", 0, 1.0, 2.0, 3.0, cog))
    np.testing.assert_allclose(f[:3], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(f[3:], expected, atol=1e-15)


def test_featurize_continuous_across_north():
    a = featurize(AisPoint("S", 0, 0, 0, 0, 359.0))
    b = featurize(AisPoint("S", 0, 0, 0, 0, 1.0))
    assert np.all(np.abs(a[3:] - b[3:]) <= 0.035)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 360, exclude_max=True))
def test_featurize_unit_circle(cog):
    f = featurize(AisPoint("S", 0, 0, 0, 0, cog))
    assert abs(f[3] ** 2 + f[4] ** 2 - 1) < 1e-9


def test_track_file_round_trip():
    tr = _track(range(4), [1, 2, 3, 4], [10, 20, 30, 40]).with_labels([0, 1, 0, 0])
    buf = io.StringIO()
    write_tracks([tr], buf)
    buf.seek(0)
    (back,) = read_tracks(buf)
    assert back == tr
    assert featurize_track(back).shape == (4, 5)
