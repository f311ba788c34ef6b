"""GeoJSON export and report figures (rendered off-screen to files)."""

from __future__ import annotations

import json
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .clustering import NOISE  # noqa: E402
from .ingest import Track  # noqa: E402

NOISE_COLOR = "0.6"


def _cluster_or_none(label) -> int | None:
    if label is None or int(label) == NOISE:
        return None
    return int(label)


def feature_collection(
    tracks: Sequence[Track],
    clusters: Mapping[str, int] | None = None,
    anomalies: set[tuple[str, float]] | None = None,
    point_clusters: Mapping[tuple[str, float], int] | None = None,
) -> dict:
    """One LineString per track and one Point per position.

    ``clusters`` gives a label per track id; ``point_clusters`` optionally
    overrides it per (track_id, t).  Noise and unclustered ships carry
    ``"cluster": null``.  Coordinates are [lon, lat] as GeoJSON requires.
    """
    clusters = clusters or {}
    anomalies = anomalies or set()
    point_clusters = point_clusters or {}
    features = []
    for tr in tracks:
        line_cluster = _cluster_or_none(clusters.get(tr.track_id))
        coords = [[p.lon, p.lat] for p in tr.points]
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {"track_id": tr.track_id, "ship_id": tr.ship_id, "cluster": line_cluster,
                           "anomaly": any((tr.track_id, p.t) in anomalies for p in tr.points)},
        })
        for p in tr.points:
            key = (tr.track_id, p.t)
            c = _cluster_or_none(point_clusters[key]) if key in point_clusters else line_cluster
            features.append({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
                "properties": {"track_id": tr.track_id, "ship_id": tr.ship_id, "t": p.t, "sog": p.sog,
                               "cog": p.cog, "cluster": c, "anomaly": key in anomalies},
            })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(collection: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(collection, fh)


def plot_tracks(tracks: Sequence[Track], clusters: Mapping[str, int], anomalies: set[tuple[str, float]], path) -> None:
    """Trajectories coloured by cluster, noise in gray, flagged points in red."""
    fig, ax = plt.subplots(figsize=(7, 6))
    labels = sorted({c for c in (_cluster_or_none(v) for v in clusters.values()) if c is not None})
    cmap = plt.get_cmap("tab20")
    color = {c: cmap(i % 20) for i, c in enumerate(labels)}
    for tr in tracks:
        c = _cluster_or_none(clusters.get(tr.track_id))
        lon, lat = tr.column("lon"), tr.column("lat")
        ax.plot(lon, lat, "-", lw=1.0, color=NOISE_COLOR if c is None else color[c])
        ax.plot(lon[:1], lat[:1], "o", ms=2.5, color=NOISE_COLOR if c is None else color[c])
        flagged = np.array([(tr.track_id, p.t) in anomalies for p in tr.points], dtype=bool)
        if flagged.any():
            ax.plot(lon[flagged], lat[flagged], "x", ms=4, color="tab:red")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title(f"{len(tracks)} tracks, {len(labels)} clusters, {len(anomalies)} flagged points")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(log: Sequence[Mapping[str, float]], path, best_epoch: int | None = None) -> None:
    epochs = [e["epoch"] for e in log]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("train_forecast", "-"), ("train_reconstruct", "--"), ("val_loss", "-")):
        ax.plot(epochs, [e[key] for e in log], style, label=key)
    if best_epoch:
        ax.axvline(best_epoch, color="0.5", lw=0.8, ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_score_histogram(scores: np.ndarray, truth: np.ndarray | None, threshold: float, path) -> None:
    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(scores.min(), scores.max(), 50) if scores.size and np.ptp(scores) > 0 else 10
    if truth is None:
        ax.hist(scores, bins=bins, color="0.5")
    else:
        truth = np.asarray(truth, dtype=bool)
        ax.hist(scores[~truth], bins=bins, alpha=0.7, label="normal")
        ax.hist(scores[truth], bins=bins, alpha=0.7, label="injected")
        ax.legend(frameon=False)
    ax.axvline(threshold, color="tab:red", lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("reasoning score")
    ax.set_ylabel("points")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
