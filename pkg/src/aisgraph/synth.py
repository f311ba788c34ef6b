"""Speed-and-course anomaly injection and the bounded-position-change check."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .ingest import AisPoint, Track, unwrap_degrees

EARTH_RADIUS_NM = 3440.065
MAX_ABS_LAT = 89.9


@dataclass(frozen=True)
class RateStats:
    mu_a: float
    sigma_a: float
    mu_w: float
    sigma_w: float


@dataclass(frozen=True)
class InjectionConfig:
    k: float = 3.5
    track_ratio: float = 0.1
    point_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("severity k must be non-negative")
        for name in ("track_ratio", "point_ratio"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass
class InjectionResult:
    track: Track
    indices: list[int]
    skipped: bool = False
    reason: str = ""


@dataclass
class InjectionManifest:
    seed: int
    config: dict
    designated: list[str]
    injected: dict[str, list[int]] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate_stats(track: Track) -> RateStats:
    """Mean and sample std of speed and course change rates per hour.

    Course differences take the shortest arc, so 359 -> 1 is +2 degrees.
    """
    if len(track) < 3:
        raise ValueError("need at least 3 points to fit change-rate statistics")
    dt = np.diff(track.times)
    a = np.diff(track.column("sog")) / dt
    w = np.diff(unwrap_degrees(track.column("cog"))) / dt
    return RateStats(float(a.mean()), float(a.std(ddof=1)), float(w.mean()), float(w.std(ddof=1)))


def track_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def inject(track: Track, stats: RateStats, cfg: InjectionConfig, rng: np.random.Generator) -> InjectionResult:
    """Perturb speed and course at randomly chosen points.

    ``round(point_ratio * n)`` indices are drawn from 1..n-1.  At each, the
    change rates become mu + s*k*sigma with one random sign s shared by speed
    and course, applied to the original previous value.
    Positions and timestamps never change.
    """
    n = len(track)
    clean = track.with_labels([0] * n)
    if stats.sigma_a == 0 and stats.sigma_w == 0:
        return InjectionResult(clean, [], skipped=True, reason="zero change-rate variance")
    count = min(n - 1, int(round(cfg.point_ratio * n)))
    idx = sorted(int(i) for i in rng.choice(np.arange(1, n), size=count, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=count)
    sog0, cog0 = track.column("sog"), track.column("cog")
    sog, cog = sog0.copy(), cog0.copy()
    t = track.times
    for i, s in zip(idx, signs):
        dt = t[i] - t[i - 1]
        a_star = stats.mu_a + s * cfg.k * stats.sigma_a
        w_star = stats.mu_w + s * cfg.k * stats.sigma_w
        # anchored on the observed previous value, so adjacent picks do not compound
        sog[i] = max(0.0, sog0[i - 1] + a_star * dt)
        cog[i] = (cog0[i - 1] + w_star * dt) % 360.0
    labels = [0] * n
    for i in idx:
        labels[i] = 1
    pts = tuple(replace(p, sog=float(sog[j]), cog=float(cog[j])) for j, p in enumerate(track.points))
    return InjectionResult(Track(track.track_id, track.ship_id, pts, tuple(labels)), idx)


def select_tracks(tracks: Sequence[Track], cfg: InjectionConfig) -> tuple[list[str], list[str]]:
    """(designated, clean) track ids; ceil(track_ratio * n) designated uniformly at random."""
    if not tracks:
        raise ValueError("no tracks to select from")
    ids = [t.track_id for t in tracks]
    count = min(len(ids), math.ceil(cfg.track_ratio * len(ids) - 1e-9))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E1EC7]))
    chosen = set(rng.choice(len(ids), size=count, replace=False).tolist())
    return [ids[i] for i in sorted(chosen)], [ids[i] for i in range(len(ids)) if i not in chosen]


def inject_corpus(tracks: Sequence[Track], cfg: InjectionConfig) -> tuple[list[Track], InjectionManifest]:
    """Designate tracks, inject each with its own RNG stream, label the rest clean."""
    designated, _ = select_tracks(tracks, cfg)
    chosen = set(designated)
    manifest = InjectionManifest(cfg.seed, asdict(cfg), designated)
    out = []
    for i, tr in enumerate(tracks):
        if tr.track_id not in chosen:
            out.append(tr.with_labels([0] * len(tr)))
            continue
        res = inject(tr, fit_rate_stats(tr), cfg, track_rng(cfg.seed, i))
        if res.skipped:
            manifest.skipped[tr.track_id] = res.reason
        manifest.injected[tr.track_id] = res.indices
        out.append(res.track)
    return out, manifest


# -- position bound ------------------------------------------------------

def position_delta(sog: float, cog: float, lat: float, dt: float) -> tuple[float, float]:
    """(dphi, dlambda) in radians for speed in knots, course in degrees, over dt hours."""
    if abs(lat) >= MAX_ABS_LAT:
        raise ValueError(f"latitude {lat} too close to a pole for the longitude formula")
    c = math.radians(cog)
    dphi = sog * math.cos(c) / EARTH_RADIUS_NM * dt
    dlam = sog * math.sin(c) / (EARTH_RADIUS_NM * math.cos(math.radians(lat))) * dt
    return dphi, dlam


@dataclass
class BoundCheck:
    eps: float
    dphi: float
    dlam: float
    bound: float
    passed: bool
    applicable: bool = True
    dphi_base: float = 0.0
    dlam_base: float = 0.0
    dphi_perturbed: float = 0.0
    dlam_perturbed: float = 0.0

    @property
    def status(self) -> str:
        if not self.applicable:
            return "not applicable"
        return "pass" if self.passed else "fail"


def position_bound_check(
    sog: float,
    cog: float,
    lat: float,
    a_star: float,
    w_star: float,
    eps: float,
    dt: float = 1.0,
) -> BoundCheck:
    """Check that a small speed/course perturbation moves the position step by at most eps*dt.

    ``w_star`` is in radians per hour and the course precondition compares it
    with the previous course in radians.  The reported dphi/dlam are the
    differences between perturbed and unperturbed position steps.
    """
    cog_rad = math.radians(cog)
    applicable = abs(a_star) <= eps * sog and abs(w_star) <= eps * cog_rad
    base = position_delta(sog, cog, lat, dt)
    sog_p = sog + a_star * dt
    cog_p = math.degrees(cog_rad + w_star * dt)
    pert = position_delta(sog_p, cog_p, lat, dt)
    dphi = pert[0] - base[0]
    dlam = pert[1] - base[1]
    bound = eps * dt
    passed = abs(dphi) <= bound and abs(dlam) <= bound
    return BoundCheck(eps, dphi, dlam, bound, passed, applicable, base[0], base[1], pert[0], pert[1])


def injection_bound_check(track: Track, stats: RateStats, cfg: InjectionConfig, index: int,
                          eps: float, sign: float = 1.0) -> BoundCheck:
    """The bound check for the perturbation an injection would apply at ``index``."""
    prev: AisPoint = track.points[index - 1]
    dt = track.points[index].t - prev.t
    a_star = stats.mu_a + sign * cfg.k * stats.sigma_a
    w_star = math.radians(stats.mu_w + sign * cfg.k * stats.sigma_w)
    return position_bound_check(prev.sog, prev.cog, prev.lat, a_star, w_star, eps, dt)
