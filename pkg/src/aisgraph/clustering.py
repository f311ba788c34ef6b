"""OPTICS over vessel positions with great-circle distances.

Two extraction modes are offered on the reachability plot:

* ``"cut"`` (default): cut the plot at ``max_eps``.  This is the
  DBSCAN-equivalent extraction, so well separated groups map one-to-one
  onto clusters.
* ``"xi"``: steep-area detection with ratio ``xi`` (scikit-learn's
  implementation), which also splits groups by density changes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
NOISE = -1


@dataclass(frozen=True)
class OpticsParams:
    min_pts: int = 3
    max_eps: float = 10.0
    xi: float = 0.05
    method: str = "cut"

    def __post_init__(self):
        if self.min_pts < 2:
            raise ValueError("min_pts must be >= 2")
        if not self.max_eps > 0:
            raise ValueError("max_eps must be > 0")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.method not in ("cut", "xi"):
            raise ValueError(f"unknown extraction method {self.method!r}")


@dataclass
class OpticsOrder:
    ship_ids: list[str]
    ordering: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray
    predecessor: np.ndarray

    def plot_rows(self) -> list[tuple[str, float]]:
        return [(self.ship_ids[i], float(self.reachability[i])) for i in self.ordering]


def haversine_matrix(lat: np.ndarray, lon: np.ndarray, radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    phi = np.radians(np.asarray(lat, dtype=float))
    lam = np.radians(np.asarray(lon, dtype=float))
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    a = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def optics_order(positions: Sequence[tuple[str, float, float]], params: OpticsParams) -> OpticsOrder:
    """OPTICS ordering; the first point of each expansion has reachability inf.

    Among equal reachabilities the lower input index is processed first.
    """
    ids = [p[0] for p in positions]
    n = len(ids)
    lat = np.array([p[1] for p in positions], dtype=float)
    lon = np.array([p[2] for p in positions], dtype=float)
    dist = haversine_matrix(lat, lon)
    core = np.full(n, np.inf)
    if n >= params.min_pts:
        # the point itself counts toward min_pts
        kth = np.sort(dist, axis=1)[:, params.min_pts - 1]
        core = np.where(kth <= params.max_eps, kth, np.inf)
    reach = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    done = np.zeros(n, dtype=bool)
    order: list[int] = []
    for start in range(n):
        if done[start]:
            continue
        heap = [(np.inf, start)]
        while heap:
            _, p = heapq.heappop(heap)
            if done[p]:
                continue
            done[p] = True
            order.append(p)
            if not np.isfinite(core[p]):
                continue
            for q in np.flatnonzero((dist[p] <= params.max_eps) & ~done):
                r = max(core[p], dist[p, q])
                if r < reach[q]:
                    reach[q] = r
                    pred[q] = p
                    heapq.heappush(heap, (r, q))
    return OpticsOrder(ids, np.array(order, dtype=int), reach, core, pred)


def extract_clusters(order: OpticsOrder, params: OpticsParams) -> dict[str, int]:
    """Cluster labels per ship id; NOISE (-1) for unclustered ships.

    Labels are renumbered 0, 1, ... in order of each cluster's first
    appearance in the reachability ordering.
    """
    n = len(order.ship_ids)
    raw = np.full(n, NOISE, dtype=int)
    if n >= params.min_pts:
        if params.method == "cut":
            current = NOISE
            for i in order.ordering:
                if order.reachability[i] > params.max_eps:
                    if order.core_distance[i] <= params.max_eps:
                        current = i
                        raw[i] = current
                    else:
                        current = NOISE
                else:
                    raw[i] = current
        else:
            from sklearn.cluster import cluster_optics_xi

            raw, _ = cluster_optics_xi(
                reachability=order.reachability,
                predecessor=order.predecessor,
                ordering=order.ordering,
                min_samples=params.min_pts,
                min_cluster_size=params.min_pts,
                xi=params.xi,
            )
            # points never reached within max_eps stay noise even if xi grouped them
            for i in range(n):
                if not np.isfinite(order.reachability[i]) and not np.isfinite(order.core_distance[i]):
                    raw[i] = NOISE
    remap: dict[int, int] = {}
    labels: dict[str, int] = {}
    for i in order.ordering:
        r = int(raw[i])
        if r == NOISE:
            labels[order.ship_ids[i]] = NOISE
            continue
        if r not in remap:
            remap[r] = len(remap)
        labels[order.ship_ids[i]] = remap[r]
    return labels


def cluster_positions(positions: Sequence[tuple[str, float, float]], params: OpticsParams | None = None) -> dict[str, int]:
    params = params or OpticsParams()
    if not positions:
        return {}
    return extract_clusters(optics_order(positions, params), params)
