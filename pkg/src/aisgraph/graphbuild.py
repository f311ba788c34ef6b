"""Temporal-node graphs: one node per (track, timestamp), edges earlier -> later."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .clustering import NOISE, OpticsParams, cluster_positions
from .ingest import Track, featurize_track

N_FEATURES = 5
_TIME_DECIMALS = 6


@dataclass(frozen=True)
class WindowConfig:
    w: int = 10
    step: int = 1

    def __post_init__(self):
        if self.w < 2:
            raise ValueError("window length w must be >= 2")
        if self.step < 1:
            raise ValueError("window step must be >= 1")


@dataclass
class TemporalGraph:
    """A window graph.  Nodes are ordered track-major, time-minor.

    ``A[u, v] == 1`` for every edge ``u -> v``.  ``mean``/``std`` are the
    per-column statistics used by :func:`standardize` (None until then).
    """

    nodes: list[tuple[str, float]]
    X: np.ndarray
    edges: np.ndarray
    window: tuple[float, int]
    ship_index: dict[str, np.ndarray]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    labels: np.ndarray | None = None
    key: str = ""

    @property
    def M(self) -> int:
        return int(len(self.edges))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def A(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes))
        if self.M:
            adj[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return adj

    @property
    def times(self) -> np.ndarray:
        return np.array([t for _, t in self.nodes])

    @property
    def track_ids(self) -> list[str]:
        return list(self.ship_index)

    def forecast_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, target) node indices: each node paired with its own track's next node."""
        src, tgt = [], []
        for idx in self.ship_index.values():
            src.extend(idx[:-1])
            tgt.extend(idx[1:])
        return np.array(src, dtype=int), np.array(tgt, dtype=int)

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return Z
        return Z * self.std + self.mean

    def to_json(self) -> str:
        return json.dumps(
            {
                "key": self.key,
                "window": list(self.window),
                "nodes": [[s, t] for s, t in self.nodes],
                "edges": self.edges.tolist(),
                "X": self.X.tolist(),
            }
        )


def windows(track: Track, cfg: WindowConfig) -> list[np.ndarray]:
    """Index windows of length w advancing by step; empty if the track is shorter than w."""
    n = len(track)
    return [np.arange(s, s + cfg.w) for s in range(0, n - cfg.w + 1, cfg.step)]


def _pair_edges(times: np.ndarray) -> np.ndarray:
    u, v = np.nonzero(times[:, None] < times[None, :])
    return np.column_stack([u, v]).astype(int) if len(u) else np.zeros((0, 2), dtype=int)


def _graph(members: Sequence[tuple[Track, np.ndarray]], start: float, w: int) -> TemporalGraph:
    nodes, feats, labels = [], [], []
    ship_index: dict[str, np.ndarray] = {}
    for track, idx in members:
        pos0 = len(nodes)
        pts = [track.points[i] for i in idx]
        nodes.extend((track.track_id, p.t) for p in pts)
        feats.append(featurize_track(replace(track, points=tuple(pts), labels=None)))
        labels.extend(track.labels[i] if track.labels is not None else 0 for i in idx)
        ship_index[track.track_id] = np.arange(pos0, pos0 + len(idx))
    times = np.array([t for _, t in nodes])
    key = f"{start:g}:" + "+".join(ship_index)
    return TemporalGraph(
        nodes=nodes,
        X=np.vstack(feats),
        edges=_pair_edges(times),
        window=(start, w),
        ship_index=ship_index,
        labels=np.array(labels, dtype=int),
        key=key,
    )


def init_graph(track: Track, window: np.ndarray) -> TemporalGraph:
    """Single-track graph with an edge for every earlier -> later timestamp pair."""
    window = np.asarray(window)
    return _graph([(track, window)], track.points[window[0]].t, len(window))


def build_multiship(
    ships: Sequence[tuple[Track, np.ndarray]],
    clusters: dict[str, int],
) -> list[TemporalGraph]:
    """One merged graph per cluster label, one solo graph per NOISE track.

    ``ships`` pairs each track with its window indices; all windows must
    cover the same timestamps.  Within a merged graph the strict
    earlier -> later rule spans all member nodes, cross-track pairs included.
    """
    if not ships:
        return []
    w = len(ships[0][1])
    start = ships[0][0].points[ships[0][1][0]].t
    groups: dict[int, list[tuple[Track, np.ndarray]]] = {}
    solos = []
    for track, idx in ships:
        label = clusters.get(track.track_id, NOISE)
        if label == NOISE:
            solos.append((track, idx))
        else:
            groups.setdefault(label, []).append((track, idx))
    graphs = [_graph(members, start, w) for _, members in sorted(groups.items())]
    graphs.extend(_graph([s], start, w) for s in solos)
    return graphs


def standardize(graph: TemporalGraph) -> TemporalGraph:
    """Per-column z-scores with population std; constant columns use divisor 1.

    Idempotent: statistics compose, so standardising again leaves X (and the
    inverse transform) unchanged.
    """
    X = graph.X
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Z = (X - mu) / sd
    if graph.mean is None:
        mean, std = mu, sd
    else:
        mean, std = graph.mean + graph.std * mu, graph.std * sd
    return replace(graph, X=Z, mean=mean, std=std)


def topological_order(graph: TemporalGraph) -> list[int] | None:
    """Kahn's algorithm; None if the graph has a cycle."""
    n = graph.n_nodes
    indeg = np.zeros(n, dtype=int)
    out: list[list[int]] = [[] for _ in range(n)]
    for u, v in graph.edges:
        out[u].append(int(v))
        indeg[v] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for v in out[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order if len(order) == n else None


@dataclass
class WindowSet:
    """All window graphs of a track collection plus the clusterings that shaped them."""

    graphs: list[TemporalGraph] = field(default_factory=list)
    clusters: dict[float, dict[str, int]] = field(default_factory=dict)


def build_window_graphs(
    tracks: Sequence[Track],
    cfg: WindowConfig | None = None,
    optics: OpticsParams | None = None,
) -> WindowSet:
    """Slide windows over a common hour grid, cluster at each window start, build and standardise.

    A track joins the window starting at hour s only if it has fixes at every
    one of s, s+1, ..., s+w-1.  Window starts advance by ``step`` from the
    earliest timestamp in the collection.
    """
    cfg = cfg or WindowConfig()
    optics = optics or OpticsParams()
    index: dict[str, dict[float, int]] = {
        tr.track_id: {round(p.t, _TIME_DECIMALS): i for i, p in enumerate(tr.points)} for tr in tracks
    }
    all_times = sorted({t for lookup in index.values() for t in lookup})
    if not all_times:
        return WindowSet()
    t0 = all_times[0]
    starts = [t for t in all_times if abs(((t - t0) / cfg.step) - round((t - t0) / cfg.step)) < 1e-9]
    out = WindowSet()
    for s in starts:
        span = [round(s + k, _TIME_DECIMALS) for k in range(cfg.w)]
        members = []
        for tr in tracks:
            lookup = index[tr.track_id]
            if all(t in lookup for t in span):
                members.append((tr, np.array([lookup[t] for t in span])))
        if not members:
            continue
        positions = [(tr.track_id, tr.points[idx[0]].lat, tr.points[idx[0]].lon) for tr, idx in members]
        clusters = cluster_positions(positions, optics)
        out.clusters[s] = clusters
        out.graphs.extend(standardize(g) for g in build_multiship(members, clusters))
    return out
