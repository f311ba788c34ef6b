"""Synthetic hourly AIS corpus: single ships and small convoys on straight-ish legs."""

from __future__ import annotations

import math

import numpy as np

from .ingest import AisPoint


def toy_corpus(
    n_tracks: int = 50,
    seed: int = 0,
    hours: tuple[int, int] = (40, 60),
    max_start: int = 12,
    convoy_sizes: tuple[int, ...] = (1, 1, 1, 2, 3, 4),
    sog_noise: float = 0.3,
    cog_noise: float = 1.5,
    turn_sd: float = 0.8,
    accel_sd: float = 0.02,
) -> list[AisPoint]:
    """Hourly fixes off Western Australia; ship ids ``V000``, ``V001``, ...

    Convoy members share start time, base speed and heading and sail a few
    kilometres abreast, so they cluster together.  Reported speed and course
    carry white noise around a slowly varying base.
    """
    rng = np.random.default_rng(seed)
    points: list[AisPoint] = []
    made = 0
    while made < n_tracks:
        size = min(int(rng.choice(convoy_sizes)), n_tracks - made)
        start = int(rng.integers(0, max_start + 1))
        length = int(rng.integers(hours[0], hours[1] + 1))
        lat0 = rng.uniform(-32.0, -20.0)
        lon0 = rng.uniform(108.0, 114.0)
        speed = rng.uniform(9.0, 16.0)
        heading = rng.uniform(0.0, 360.0)
        turn = rng.normal(0.0, turn_sd)
        accel = rng.normal(0.0, accel_sd)
        for m in range(size):
            ship = f"V{made:03d}"
            made += 1
            # abreast offset, ~3 km per slot perpendicular to the heading
            off_nm = 1.6 * m
            perp = math.radians(heading + 90.0)
            lat = lat0 + off_nm * math.cos(perp) / 60.0
            lon = lon0 + off_nm * math.sin(perp) / (60.0 * math.cos(math.radians(lat0)))
            for h in range(length):
                base_sog = speed + accel * h
                base_cog = heading + turn * h
                sog = max(0.1, base_sog + rng.normal(0.0, sog_noise))
                cog = (base_cog + rng.normal(0.0, cog_noise)) % 360.0
                points.append(AisPoint(ship, float(start + h), float(lat), float(lon), float(sog), float(cog)))
                c = math.radians(base_cog)
                lat += base_sog * math.cos(c) / 60.0
                lon += base_sog * math.sin(c) / (60.0 * math.cos(math.radians(lat)))
                lon = (lon + 180.0) % 360.0 - 180.0
    return points


def write_csv(points, fh) -> None:
    fh.write("ship_id,t,lat,lon,sog,cog\n")
    for p in points:
        fh.write(f"{p.ship_id},{p.t:g},{p.lat:.6f},{p.lon:.6f},{p.sog:.4f},{p.cog:.4f}\n")
