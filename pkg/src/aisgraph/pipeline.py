"""Dataset split, training loop, scoring and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import detect
from .clustering import OpticsParams
from .graphbuild import TemporalGraph, WindowConfig, WindowSet, build_window_graphs
from .ingest import Track
from .model import GraphBatch, GraphModel, ModelConfig, Noise
from .numerics import NumericError, adam_step, clip_global_norm

log = logging.getLogger(__name__)


class DataError(ValueError):
    """The data cannot support the requested stage (e.g. nothing to train on)."""


# -- split ----------------------------------------------------------------

@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def split(tracks: Sequence[Track], seed: int = 0, val_share: float = 0.1,
          clean_test_share: float = 0.5) -> SplitManifest:
    """Anomalous tracks go to test; clean tracks fill a test holdout, then 90/10 train/val."""
    anomalous = [t.track_id for t in tracks if t.labels is not None and any(t.labels)]
    clean = [t.track_id for t in tracks if not (t.labels is not None and any(t.labels))]
    if not clean:
        raise DataError("no clean tracks left to train on")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    clean = [clean[i] for i in rng.permutation(len(clean))]
    n_test = int(math.floor(clean_test_share * len(clean)))
    holdout, rest = clean[:n_test], clean[n_test:]
    n_train = int(round((1 - val_share) * len(rest)))
    if len(rest) >= 2:
        n_train = min(max(n_train, 1), len(rest) - 1)
    return SplitManifest(sorted(rest[:n_train]), sorted(rest[n_train:]), sorted(anomalous + holdout))


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    gate_lr: float = 0.05
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    clip_norm: float = 5.0


@dataclass
class TrainResult:
    model: GraphModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")


def batches(graphs: Sequence[TemporalGraph], size: int, order: np.ndarray | None = None):
    idx = np.arange(len(graphs)) if order is None else order
    for lo in range(0, len(idx), size):
        yield [graphs[i] for i in idx[lo:lo + size]]


def validation_loss(model: GraphModel, graphs: Sequence[TemporalGraph], size: int = 64) -> float:
    """Graph-weighted mean of L_forecast + L_reconstruct in eval mode (no L0 term)."""
    total, count = 0.0, 0
    for chunk in batches(graphs, size):
        out = model.forward(GraphBatch(chunk), mode="eval")
        total += (out.forecast.item() + out.reconstruct.item()) * len(chunk)
        count += len(chunk)
    return total / max(count, 1)


def train(
    train_graphs: Sequence[TemporalGraph],
    val_graphs: Sequence[TemporalGraph],
    model_cfg: ModelConfig | None = None,
    optim: OptimConfig | None = None,
    seed: int = 0,
) -> TrainResult:
    """Minimise the total loss; early-stop on validation, keep the best parameters."""
    optim = optim or OptimConfig()
    if not train_graphs:
        raise DataError("no training graphs")
    model = GraphModel(model_cfg, seed=seed)
    for g in train_graphs:
        model.ensure_gates(g)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EA1]))
    result = TrainResult(model)
    best_state = model.store.state()
    stale = 0
    for epoch in range(1, optim.max_epochs + 1):
        sums = {"forecast": 0.0, "reconstruct": 0.0, "l0": 0.0, "kl": 0.0, "total": 0.0}
        n_seen = 0
        order = rng.permutation(len(train_graphs))
        for b, chunk in enumerate(batches(train_graphs, optim.batch_size, order)):
            batch = GraphBatch(chunk)
            model.store.zero_grad()
            out = model.forward(batch, "train", Noise.draw(batch, model.cfg, rng))
            value = out.loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {b}")
            out.loss.backward()
            grads = model.store.grads(model.trainable_names(batch))
            clip_global_norm(grads, optim.clip_norm)
            adam_step(model.store, grads, optim.lr, optim.weight_decay, lr_overrides={"gate/": optim.gate_lr})
            k = len(chunk)
            sums["forecast"] += out.forecast.item() * k
            sums["reconstruct"] += out.reconstruct.item() * k
            sums["l0"] += out.l0.item() * k
            sums["kl"] += out.kl.item() * k
            sums["total"] += value * k
            n_seen += k
        val = validation_loss(model, val_graphs) if val_graphs else sums["total"] / n_seen
        entry = {"epoch": epoch, **{f"train_{k}": v / n_seen for k, v in sums.items()},
                 "val_loss": val, "active_edges": model.active_edge_count(train_graphs)}
        result.log.append(entry)
        log.debug("epoch %d  train %.5f  val %.5f  active %d", epoch, entry["train_total"], val,
                 entry["active_edges"])
        if val < result.best_val:
            result.best_val, result.best_epoch = val, epoch
            best_state = model.store.state()
            stale = 0
        else:
            stale += 1
            if stale >= optim.patience:
                break
    model.store.load_state(best_state)
    return result


# -- scoring ---------------------------------------------------------------

@dataclass
class PointComponents:
    """Per-point E and P averaged over every window the point appears in."""

    keys: list[tuple[str, float]]
    E: np.ndarray
    P: np.ndarray
    labels: np.ndarray
    ship_ids: list[str]


def score_graphs(model: GraphModel, graphs: Sequence[TemporalGraph], size: int = 64) -> PointComponents:
    """Eval-mode forecast error and reconstruction probability per (track, t).

    A node's forecast error belongs to the point being predicted, i.e. the
    prediction made from the same track's previous node.  Points that are
    never a forecast target (track starts) get E = 0.
    """
    e_acc: dict[tuple[str, float], list[float]] = {}
    p_acc: dict[tuple[str, float], list[float]] = {}
    label_of: dict[tuple[str, float], int] = {}
    for chunk in batches(graphs, size):
        batch = GraphBatch(chunk)
        out = model.forward(batch, mode="eval")
        err = ((out.prediction - out.target) ** 2).mean(axis=1)
        node_keys = [n for g in chunk for n in g.nodes]
        node_labels = np.concatenate([g.labels for g in chunk])
        for node, e in zip(batch.tgt, err):
            e_acc.setdefault(node_keys[node], []).append(float(e))
        probs = detect.node_recon_prob(out.recon_prob, batch.A_ship)
        for block, prow in zip(batch.blocks, probs):
            for node, p in zip(block, prow):
                key = node_keys[node]
                p_acc.setdefault(key, []).append(float(p))
                label_of[key] = int(node_labels[node])
    keys = sorted(p_acc)
    E = np.array([np.mean(e_acc[k]) if k in e_acc else 0.0 for k in keys])
    P = np.array([np.mean(p_acc[k]) for k in keys])
    labels = np.array([label_of[k] for k in keys], dtype=int)
    return PointComponents(keys, E, P, labels, [k[0].split("#")[0] for k in keys])


def to_point_scores(comp: PointComponents, gamma: float) -> list[detect.PointScore]:
    rs = detect.reasoning_score(comp.E, comp.P, gamma)
    return [detect.PointScore(k[0], k[1], float(e), float(p), float(r), 0, s)
            for k, e, p, r, s in zip(comp.keys, comp.E, comp.P, rs, comp.ship_ids)]


@dataclass(frozen=True)
class DetectConfig:
    q: float = 1e-2
    init_quantile: float = 0.98
    gammas: tuple[float, ...] = detect.DEFAULT_GAMMAS
    min_exceed: int = 20


def run_detection(model: GraphModel, calib: Sequence[TemporalGraph], val: Sequence[TemporalGraph],
                  test: Sequence[TemporalGraph], cfg: DetectConfig | None = None) -> detect.AnomalyReport:
    """Tune gamma on clean validation points, fit POT on clean calibration+validation scores, label test."""
    cfg = cfg or DetectConfig()
    if not test:
        raise DataError("empty test set")
    cal = score_graphs(model, calib)
    vs = score_graphs(model, val) if val else cal
    gamma, rates = detect.tune_gamma(cal.E, cal.P, vs.E, vs.P, cfg.gammas, cfg.q, cfg.init_quantile, cfg.min_exceed)
    pool_E = np.concatenate([cal.E, vs.E]) if val else cal.E
    pool_P = np.concatenate([cal.P, vs.P]) if val else cal.P
    fit = detect.pot_threshold(detect.reasoning_score(pool_E, pool_P, gamma), cfg.q, cfg.init_quantile,
                               cfg.min_exceed)
    ts = score_graphs(model, test)
    report = detect.classify(to_point_scores(ts, gamma), fit, gamma)
    report.extra["false_alarm_rates"] = {str(g): r for g, r in rates.items()}
    return report


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalSummary:
    precision: float
    recall: float
    f1: float
    roc_auc: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    gamma: float
    zero_positive: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def roc_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties; nan if one class is absent."""
    from scipy.stats import rankdata

    truth = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(report: detect.AnomalyReport, truth: dict[tuple[str, float], int]) -> EvalSummary:
    """Point-level metrics of the report's labels against injected ground truth."""
    if not report.scores:
        raise DataError("empty test set")
    pred = np.array([s.label for s in report.scores], dtype=bool)
    y = np.array([truth.get((s.track_id, s.t), 0) for s in report.scores], dtype=bool)
    rs = np.array([s.RS for s in report.scores])
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    tn = int((~pred & ~y).sum())
    zero_positive = (tp + fp + fn) == 0
    if zero_positive:
        precision = recall = f1 = 1.0
    else:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalSummary(precision, recall, f1, roc_auc(rs, y), tp, fp, tn, fn, report.fit.z_q,
                       report.gamma, zero_positive)


def truth_table(tracks: Sequence[Track]) -> dict[tuple[str, float], int]:
    out = {}
    for tr in tracks:
        labels = tr.labels or (0,) * len(tr)
        for p, lab in zip(tr.points, labels):
            out[(tr.track_id, p.t)] = int(lab)
    return out


def build_partition(tracks: Sequence[Track], ids: Sequence[str], window: WindowConfig,
                    optics: OpticsParams) -> WindowSet:
    chosen = set(ids)
    return build_window_graphs([t for t in tracks if t.track_id in chosen], window, optics)
