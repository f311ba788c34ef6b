"""AIS record parsing, journey segmentation, gap interpolation and featurisation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from itertools import groupby
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_COLUMNS = {
    "ship_id": "ship_id",
    "t": "t",
    "lat": "lat",
    "lon": "lon",
    "sog": "sog",
    "cog": "cog",
}


class ConfigError(ValueError):
    """Input cannot be interpreted at all (e.g. a required column is missing)."""


@dataclass(frozen=True)
class AisPoint:
    ship_id: str
    t: float
    lat: float
    lon: float
    sog: float
    cog: float


@dataclass(frozen=True)
class Track:
    track_id: str
    ship_id: str
    points: tuple[AisPoint, ...]
    labels: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @property
    def duration(self) -> float:
        return self.points[-1].t - self.points[0].t if self.points else 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    def with_labels(self, labels: Sequence[int]) -> "Track":
        if len(labels) != len(self.points):
            raise ValueError("one label per point required")
        return replace(self, labels=tuple(int(x) for x in labels))


@dataclass
class Reject:
    line: int
    reason: str
    raw: str


@dataclass
class ParseResult:
    points: list[AisPoint] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)


def _point_from_row(row: Mapping[str, str], cols: Mapping[str, str]) -> AisPoint:
    ship = row[cols["ship_id"]].strip()
    if not ship:
        raise ValueError("empty ship id")
    t, lat, lon, sog, cog = (float(row[cols[k]]) for k in ("t", "lat", "lon", "sog", "cog"))
    for name, v in (("t", t), ("lat", lat), ("lon", lon), ("sog", sog), ("cog", cog)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name}")
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} out of range")
    if not -180.0 < lon <= 180.0:
        raise ValueError(f"longitude {lon} out of range")
    if sog < 0:
        raise ValueError(f"negative speed {sog}")
    return AisPoint(ship, t, lat, lon, sog, cog % 360.0)


def parse_ais(
    source: IO[str] | IO[bytes] | str,
    columns: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> ParseResult:
    """Read delimited AIS text into points.

    Bad rows are collected in ``rejects`` with their 1-based line number
    (the header is line 1).  A missing required column raises ConfigError.
    """
    cols = dict(DEFAULT_COLUMNS)
    cols.update(columns or {})
    if isinstance(source, str):
        source = io.StringIO(source)
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in (reader.fieldnames or [])]
    reader.fieldnames = header
    missing = [v for v in cols.values() if v not in header]
    if missing:
        raise ConfigError(f"missing required column(s): {', '.join(missing)}")
    result = ParseResult()
    for row in reader:
        line = reader.line_num
        raw = delimiter.join("" if v is None else str(v) for v in row.values())
        if None in row or any(row.get(c) is None for c in cols.values()):
            result.rejects.append(Reject(line, "wrong field count", raw))
            continue
        try:
            result.points.append(_point_from_row(row, cols))
        except ValueError as exc:
            result.rejects.append(Reject(line, str(exc), raw))
    return result


def segment_tracks(points: Iterable[AisPoint], gap_h: float = 3.5, min_h: float = 10.0) -> list[Track]:
    """Split each ship's points into journeys.

    A point with sog == 0 is a stoppage: it ends the current journey and is
    itself dropped.  A time gap larger than ``gap_h`` also ends a journey.
    Journeys whose span (last t minus first t) is below ``min_h`` are discarded.
    Duplicate timestamps keep the first record.
    """
    ordered = sorted(points, key=lambda p: (p.ship_id, p.t))
    tracks: list[Track] = []
    for ship, group in groupby(ordered, key=lambda p: p.ship_id):
        pieces: list[list[AisPoint]] = []
        current: list[AisPoint] = []
        for p in group:
            if p.sog == 0:
                if current:
                    pieces.append(current)
                current = []
                continue
            if current and p.t <= current[-1].t:
                continue
            if current and p.t - current[-1].t > gap_h:
                pieces.append(current)
                current = []
            current.append(p)
        if current:
            pieces.append(current)
        k = 0
        for piece in pieces:
            if piece[-1].t - piece[0].t >= min_h:
                tracks.append(Track(f"{ship}#{k}", ship, tuple(piece)))
                k += 1
    return tracks


def unwrap_degrees(cog: np.ndarray) -> np.ndarray:
    """Unwrap a heading sequence so consecutive steps take the shortest arc."""
    return np.degrees(np.unwrap(np.radians(np.asarray(cog, dtype=float))))


def interpolate(track: Track, step_h: float = 1.0) -> Track:
    """Resample onto a regular grid starting at the first timestamp.

    lat, lon and sog are linear in time; cog follows the shortest arc between
    neighbouring fixes.  The grid stops at the last whole step, so a final
    fix off the grid is not reproduced.
    """
    t = track.times
    if len(t) < 2:
        return track
    n_steps = int(math.floor((t[-1] - t[0]) / step_h + 1e-9))
    grid = t[0] + step_h * np.arange(n_steps + 1)
    if len(grid) == len(t) and np.allclose(grid, t, rtol=0, atol=1e-9):
        return track
    lat = np.interp(grid, t, track.column("lat"))
    lon = np.interp(grid, t, track.column("lon"))
    sog = np.interp(grid, t, track.column("sog"))
    cog = np.interp(grid, t, unwrap_degrees(track.column("cog"))) % 360.0
    pts = tuple(
        AisPoint(track.ship_id, float(g), float(a), float(o), float(s), float(c))
        for g, a, o, s, c in zip(grid, lat, lon, sog, cog)
    )
    return replace(track, points=pts, labels=None)


def featurize(point: AisPoint) -> np.ndarray:
    rad = math.radians(point.cog)
    return np.array([point.lat, point.lon, point.sog, math.sin(rad), math.cos(rad)])


def featurize_track(track: Track) -> np.ndarray:
    rad = np.radians(track.column("cog"))
    return np.column_stack([track.column("lat"), track.column("lon"), track.column("sog"), np.sin(rad), np.cos(rad)])


# -- canonical track file (JSON lines) ---------------------------------------

def write_tracks(tracks: Iterable[Track], fh: IO[str]) -> None:
    for tr in tracks:
        for i, p in enumerate(tr.points):
            rec = {
                "track_id": tr.track_id,
                "ship_id": tr.ship_id,
                "t": p.t,
                "lat": p.lat,
                "lon": p.lon,
                "sog": p.sog,
                "cog": p.cog,
                "label": None if tr.labels is None else tr.labels[i],
            }
            fh.write(json.dumps(rec) + "\n")


def read_tracks(fh: IO[str]) -> list[Track]:
    rows = [json.loads(line) for line in fh if line.strip()]
    order: list[str] = []
    grouped: dict[str, list[dict]] = {}
    for r in rows:
        key = r.get("track_id") or r["ship_id"]
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(r)
    tracks = []
    for key in order:
        recs = sorted(grouped[key], key=lambda r: r["t"])
        pts = tuple(AisPoint(r["ship_id"], r["t"], r["lat"], r["lon"], r["sog"], r["cog"]) for r in recs)
        labels = None
        if all(r.get("label") is not None for r in recs):
            labels = tuple(int(r["label"]) for r in recs)
        tracks.append(Track(key, recs[0]["ship_id"], pts, labels))
    return tracks
