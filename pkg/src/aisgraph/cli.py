"""Command-line orchestration: ingest, inject, split, train, detect, eval, plot.

Every stage reads one section of a YAML config and keeps all of its
outputs inside ``paths.workdir``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import detect, plotting, synth, toy
from .clustering import OpticsParams, cluster_positions
from .graphbuild import WindowConfig, WindowSet
from .ingest import ConfigError, Track, interpolate, parse_ais, read_tracks, segment_tracks, write_tracks
from .model import GraphModel, ModelConfig
from .numerics import NumericError
from .pipeline import (DataError, DetectConfig, OptimConfig, SplitManifest, build_partition, evaluate,
                       run_detection, split, train, truth_table)

log = logging.getLogger("aisgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# workdir file names
TRACKS = "tracks.jsonl"
REJECTS = "rejects.json"
LABELED = "labeled.jsonl"
INJECTION = "injection_manifest.json"
SPLIT = "split_manifest.json"
CHECKPOINT = "model.ckpt"
TRAIN_LOG = "train_log.json"
LOSS_PNG = "loss_curve.png"
REPORT = "report.jsonl"
SCORES_PNG = "score_histogram.png"
EVAL = "eval_summary.json"
GEOJSON = "tracks.geojson"
TRACKS_PNG = "tracks.png"


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class IngestConfig:
    delimiter: str = ","
    columns: dict = field(default_factory=dict)
    gap_h: float = 3.5
    min_h: float = 10.0
    step_h: float = 1.0

    def __post_init__(self):
        if self.gap_h <= 0 or self.min_h < 0 or self.step_h <= 0:
            raise ValueError("gap_h and step_h must be positive, min_h non-negative")


@dataclass(frozen=True)
class SplitConfig:
    val_share: float = 0.1
    clean_test_share: float = 0.5

    def __post_init__(self):
        if not 0 <= self.val_share < 1 or not 0 <= self.clean_test_share < 1:
            raise ValueError("split shares must lie in [0, 1)")


@dataclass(frozen=True)
class ToyConfig:
    n_tracks: int = 50
    seed: int = 0


@dataclass
class RunConfig:
    input: Path
    workdir: Path
    seed: int = 0
    toy: ToyConfig = field(default_factory=ToyConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    inject: synth.InjectionConfig = field(default_factory=synth.InjectionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    graph: WindowConfig = field(default_factory=WindowConfig)
    optics: OpticsParams = field(default_factory=OpticsParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def out(self, name: str) -> Path:
        return self.workdir / name


SECTIONS: dict[str, type] = {
    "toy": ToyConfig,
    "ingest": IngestConfig,
    "inject": synth.InjectionConfig,
    "split": SplitConfig,
    "graph": WindowConfig,
    "optics": OpticsParams,
    "model": ModelConfig,
    "optim": OptimConfig,
    "detect": DetectConfig,
}


def _section(cls: type, raw: Any, name: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    if "gammas" in raw:
        raw = {**raw, "gammas": tuple(float(g) for g in raw["gammas"])}
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def parse_config(data: Any, base: Path = Path(".")) -> RunConfig:
    """Validate a config mapping; relative paths resolve against ``base``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - set(SECTIONS) - {"paths", "seed"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    paths = data.get("paths") or {}
    if not isinstance(paths, dict) or "input" not in paths or "workdir" not in paths:
        raise ConfigError("paths.input and paths.workdir are required")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    sections = {name: _section(cls, data.get(name), name) for name, cls in SECTIONS.items()}
    if "seed" not in (data.get("inject") or {}):
        sections["inject"] = dataclasses.replace(sections["inject"], seed=seed)
    return RunConfig(input=(base / paths["input"]).resolve(), workdir=(base / paths["workdir"]).resolve(),
                     seed=seed, **sections)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data, path.parent)


# -- workdir io -------------------------------------------------------------

def _need(cfg: RunConfig, name: str, stage: str) -> Path:
    p = cfg.out(name)
    if not p.exists():
        raise DataError(f"{p} missing; run `{stage}` first")
    return p


def _tracks(path: Path) -> list[Track]:
    with open(path) as fh:
        return read_tracks(fh)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _partitions(cfg: RunConfig) -> tuple[list[Track], SplitManifest, dict[str, WindowSet]]:
    tracks = _tracks(_need(cfg, LABELED, "inject"))
    manifest = SplitManifest(**json.loads(_need(cfg, SPLIT, "split").read_text()))
    parts = {name: build_partition(tracks, getattr(manifest, name), cfg.graph, cfg.optics)
             for name in ("train", "val", "test")}
    return tracks, manifest, parts


# -- stages -------------------------------------------------------------------

def stage_toy(cfg: RunConfig) -> None:
    cfg.input.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.input, "w") as fh:
        toy.write_csv(toy.toy_corpus(cfg.toy.n_tracks, seed=cfg.toy.seed), fh)
    log.info("wrote %d synthetic tracks to %s", cfg.toy.n_tracks, cfg.input)


def stage_ingest(cfg: RunConfig) -> list[Track]:
    if not cfg.input.exists():
        raise ConfigError(f"input not found: {cfg.input}")
    with open(cfg.input, newline="") as fh:
        parsed = parse_ais(fh, cfg.ingest.columns, cfg.ingest.delimiter)
    tracks = [interpolate(t, cfg.ingest.step_h)
              for t in segment_tracks(parsed.points, cfg.ingest.gap_h, cfg.ingest.min_h)]
    if not tracks:
        raise DataError("no track survives segmentation")
    with open(cfg.out(TRACKS), "w") as fh:
        write_tracks(tracks, fh)
    _write_json(cfg.out(REJECTS), [dataclasses.asdict(r) for r in parsed.rejects])
    log.info("ingest: %d points, %d rejects, %d tracks", len(parsed.points), len(parsed.rejects), len(tracks))
    return tracks


def stage_inject(cfg: RunConfig) -> synth.InjectionManifest:
    tracks = _tracks(_need(cfg, TRACKS, "ingest"))
    labeled, manifest = synth.inject_corpus(tracks, cfg.inject)
    with open(cfg.out(LABELED), "w") as fh:
        write_tracks(labeled, fh)
    _write_json(cfg.out(INJECTION), manifest.to_dict())
    log.info("inject: %d of %d tracks designated", len(manifest.designated), len(tracks))
    return manifest


def stage_split(cfg: RunConfig) -> SplitManifest:
    tracks = _tracks(_need(cfg, LABELED, "inject"))
    manifest = split(tracks, cfg.seed, cfg.split.val_share, cfg.split.clean_test_share)
    _write_json(cfg.out(SPLIT), manifest.to_dict())
    log.info("split: train %d, val %d, test %d", len(manifest.train), len(manifest.val), len(manifest.test))
    return manifest


def stage_train(cfg: RunConfig) -> dict:
    _, _, parts = _partitions(cfg)
    t0 = time.perf_counter()
    result = train(parts["train"].graphs, parts["val"].graphs, cfg.model, cfg.optim, seed=cfg.seed)
    result.model.save(cfg.out(CHECKPOINT))
    record = {"best_epoch": result.best_epoch, "best_val": result.best_val, "epochs": result.log}
    _write_json(cfg.out(TRAIN_LOG), record)
    plotting.plot_loss_curve(result.log, cfg.out(LOSS_PNG), result.best_epoch)
    log.info("train: %d epochs in %.1f s, best epoch %d (val %.5f)", len(result.log),
             time.perf_counter() - t0, result.best_epoch, result.best_val)
    return record


def stage_detect(cfg: RunConfig) -> detect.AnomalyReport:
    model = GraphModel.load(_need(cfg, CHECKPOINT, "train"))
    _, _, parts = _partitions(cfg)
    report = run_detection(model, parts["train"].graphs, parts["val"].graphs, parts["test"].graphs, cfg.detect)
    with open(cfg.out(REPORT), "w") as fh:
        report.write(fh)
    plotting.plot_score_histogram(np.array([s.RS for s in report.scores]), None, report.fit.z_q,
                                  cfg.out(SCORES_PNG))
    if report.fit.warning:
        log.warning("detect: %s", report.fit.warning)
    log.info("detect: %d of %d points flagged, threshold %.4f, gamma %g", report.n_anomalies,
             len(report.scores), report.fit.z_q, report.gamma)
    return report


def _report(cfg: RunConfig) -> detect.AnomalyReport:
    with open(_need(cfg, REPORT, "detect")) as fh:
        return detect.read_report(fh)


def stage_eval(cfg: RunConfig) -> dict:
    report = _report(cfg)
    truth = truth_table(_tracks(_need(cfg, LABELED, "inject")))
    summary = evaluate(report, truth)
    _write_json(cfg.out(EVAL), summary.to_dict())
    y = np.array([truth.get((s.track_id, s.t), 0) for s in report.scores], dtype=bool)
    plotting.plot_score_histogram(np.array([s.RS for s in report.scores]), y, report.fit.z_q,
                                  cfg.out(SCORES_PNG))
    log.info("eval: precision %.3f recall %.3f F1 %.3f AUC %.3f", summary.precision, summary.recall,
             summary.f1, summary.roc_auc)
    return summary.to_dict()


def snapshot_clusters(tracks: Sequence[Track], optics: OpticsParams) -> tuple[dict[str, int], dict]:
    """Cluster the fleet hour by hour.

    Returns the track labels at the busiest hour (used for lines) and a
    per-(track_id, t) label for every position.
    """
    by_time: dict[float, list[tuple[str, float, float]]] = {}
    for tr in tracks:
        for p in tr.points:
            by_time.setdefault(p.t, []).append((tr.track_id, p.lat, p.lon))
    per_point: dict[tuple[str, float], int] = {}
    busiest, best = None, -1
    for t in sorted(by_time):
        labels = cluster_positions(by_time[t], optics)
        for tid, lab in labels.items():
            per_point[(tid, t)] = lab
        if len(labels) > best:
            busiest, best = labels, len(labels)
    return dict(busiest or {}), per_point


def stage_plot(cfg: RunConfig) -> dict:
    source = cfg.out(LABELED) if cfg.out(LABELED).exists() else _need(cfg, TRACKS, "ingest")
    tracks = _tracks(source)
    anomalies: set[tuple[str, float]] = set()
    if cfg.out(REPORT).exists():
        anomalies = {(s.track_id, s.t) for s in _report(cfg).scores if s.label}
    lines, points = snapshot_clusters(tracks, cfg.optics)
    collection = plotting.feature_collection(tracks, lines, anomalies, points)
    plotting.write_geojson(collection, cfg.out(GEOJSON))
    plotting.plot_tracks(tracks, lines, anomalies, cfg.out(TRACKS_PNG))
    log.info("plot: %d features", len(collection["features"]))
    return collection


STAGES: dict[str, Callable[[RunConfig], Any]] = {
    "ingest": stage_ingest,
    "inject": stage_inject,
    "split": stage_split,
    "train": stage_train,
    "detect": stage_detect,
    "eval": stage_eval,
    "plot": stage_plot,
}


def run_pipeline(cfg: RunConfig) -> dict:
    """All stages in order; returns the evaluation summary."""
    results = {name: fn(cfg) for name, fn in STAGES.items()}
    return results["eval"]


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aisgraph", description="Graph-based AIS trajectory anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "toy": "write a synthetic AIS csv to paths.input",
        "ingest": "parse, segment and interpolate raw AIS",
        "inject": "inject speed/course anomalies",
        "split": "train/val/test split",
        "train": "train the model",
        "detect": "score test points and threshold them",
        "eval": "point-level metrics against injected labels",
        "plot": "GeoJSON and map of tracks, clusters and flags",
        "pipeline": "ingest through plot",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("-c", "--config", required=True, help="YAML run config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.command in ("ingest", "pipeline") and not cfg.input.exists():
            raise ConfigError(f"input not found: {cfg.input}")
        cfg.workdir.mkdir(parents=True, exist_ok=True)
        if args.command == "toy":
            stage_toy(cfg)
        elif args.command == "pipeline":
            print(json.dumps(run_pipeline(cfg), sort_keys=True))
        else:
            out = STAGES[args.command](cfg)
            if args.command == "eval":
                print(json.dumps(out, sort_keys=True))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError, KeyError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
