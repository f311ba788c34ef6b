"""GCN encoder with L0 edge gates, a next-step forecaster and a per-track VGAE.

Shared weights live in one :class:`~aisgraph.numerics.ParamStore`; every
window graph additionally owns a vector of gate log-alphas named
``gate/<graph key>``, one entry per edge in the graph's edge order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .graphbuild import N_FEATURES, TemporalGraph
from .numerics import ParamStore, Tensor

GATE_PREFIX = "gate/"


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = N_FEATURES
    hidden: int = 64
    embed: int = 32
    forecast_hidden: int = 64
    latent: int = 16
    lam: float = 1e-3
    beta: float = 1.0
    temperature: float = 2.0 / 3.0
    stretch_low: float = -0.1
    stretch_high: float = 1.1
    gate_init: float = 2.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# -- hard-concrete gates ---------------------------------------------------

def gate_open_probability(log_alpha, cfg: ModelConfig):
    """Closed-form P(z > 0) per gate; also the expected-L0 contribution."""
    shift = cfg.temperature * math.log(-cfg.stretch_low / cfg.stretch_high)
    if isinstance(log_alpha, Tensor):
        return nx.sigmoid(log_alpha - shift)
    return 1.0 / (1.0 + np.exp(-(np.asarray(log_alpha) - shift)))


def sample_gates(log_alpha, cfg: ModelConfig, mode: str = "train", noise: np.ndarray | None = None):
    """Per-edge gate values in [0, 1].

    ``train`` draws a stretched hard-concrete sample from uniform ``noise``;
    ``eval`` is deterministic and binarised at 0.5.
    """
    width = cfg.stretch_high - cfg.stretch_low
    if mode == "train":
        if noise is None:
            raise ValueError("train-mode gates need one uniform draw per edge")
        u = np.clip(noise, 1e-12, 1 - 1e-12)
        logistic = np.log(u) - np.log1p(-u)
        s = nx.sigmoid((nx.as_tensor(log_alpha) + logistic) * (1.0 / cfg.temperature))
        return nx.clamp(s * width + cfg.stretch_low, 0.0, 1.0)
    if mode == "eval":
        la = log_alpha.data if isinstance(log_alpha, Tensor) else np.asarray(log_alpha, dtype=float)
        s = 1.0 / (1.0 + np.exp(-la))
        z = np.clip(s * width + cfg.stretch_low, 0.0, 1.0)
        return Tensor((z > 0.5).astype(float))
    raise ValueError(f"unknown gate mode {mode!r}")


def mask_adjacency(edges: np.ndarray, z, n_nodes: int) -> Tensor:
    """Dense masked adjacency with entry [u, v] = z_e for edge e = (u, v)."""
    z = nx.as_tensor(z)
    if len(edges) == 0:
        return Tensor(np.zeros((n_nodes, n_nodes)))
    return nx.scatter(z, (edges[:, 0], edges[:, 1]), (n_nodes, n_nodes))


def propagation_matrix(masked: Tensor) -> Tensor:
    """D_in^-1 (A_masked + I) laid out so that row v aggregates v's in-neighbours."""
    n = masked.shape[0]
    incoming = nx.transpose(masked) + Tensor(np.eye(n))
    degree = nx.sum(incoming, axis=1, keepdims=True)
    return incoming / nx.expand(degree, (n, n))


# -- batching -------------------------------------------------------------

class GraphBatch:
    """Block-diagonal union of window graphs sharing one window length."""

    def __init__(self, graphs: Sequence[TemporalGraph]):
        if not graphs:
            raise ValueError("empty batch")
        ws = {len(idx) for g in graphs for idx in g.ship_index.values()}
        if len(ws) != 1:
            raise ValueError("all tracks in a batch must have the same window length")
        self.graphs = list(graphs)
        self.w = ws.pop()
        offsets = np.cumsum([0] + [g.n_nodes for g in graphs])
        self.offsets = offsets
        self.n_nodes = int(offsets[-1])
        self.X = np.vstack([g.X for g in graphs])
        self.edges = np.vstack([g.edges + off for g, off in zip(graphs, offsets[:-1])]).astype(int)
        self.edge_offsets = np.cumsum([0] + [g.M for g in graphs])
        src, tgt, blocks, block_graph = [], [], [], []
        for gi, (g, off) in enumerate(zip(graphs, offsets[:-1])):
            s, t = g.forecast_pairs()
            src.append(s + off)
            tgt.append(t + off)
            for idx in g.ship_index.values():
                blocks.append(idx + off)
                block_graph.append(gi)
        self.src = np.concatenate(src)
        self.tgt = np.concatenate(tgt)
        self.blocks = np.array(blocks, dtype=int)
        self.block_graph = np.array(block_graph, dtype=int)
        self.A_ship = np.triu(np.ones((self.w, self.w)), k=1)

    @property
    def keys(self) -> list[str]:
        return [g.key for g in self.graphs]


@dataclass
class Noise:
    gates: np.ndarray
    latent: np.ndarray

    @classmethod
    def draw(cls, batch: GraphBatch, cfg: ModelConfig, rng: np.random.Generator) -> "Noise":
        return cls(
            gates=rng.uniform(size=len(batch.edges)),
            latent=rng.standard_normal((len(batch.blocks), batch.w, cfg.latent)),
        )


@dataclass
class Outputs:
    loss: Tensor
    forecast: Tensor
    reconstruct: Tensor
    l0: Tensor
    kl: Tensor
    active_edges: int
    prediction: np.ndarray
    target: np.ndarray
    recon_prob: np.ndarray
    embedding: np.ndarray


# -- loss pieces (usable on their own) ----------------------------------------

def forecast_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(target)
    return nx.mean(diff * diff)


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over nodes of KL(N(mu, diag exp(logvar)) || N(0, I)), summed over latent dims."""
    terms = (mu * mu + nx.exp(logvar) - logvar - 1.0) * 0.5
    per_node = nx.sum(terms, axis=-1)
    return nx.mean(per_node)


def weighted_bce_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Class-weighted BCE; positives weighted by #non-edges / #edges of ``target``."""
    pos = target.sum()
    neg = target.size - pos
    if pos == 0:
        weight = np.ones_like(target)
    else:
        weight = np.where(target > 0, neg / pos, 1.0)
    target = np.broadcast_to(target, logits.shape)
    weight = np.broadcast_to(weight, logits.shape)
    loss = Tensor(weight * target) * nx.softplus(-logits) + Tensor(1.0 - target) * nx.softplus(logits)
    return nx.mean(loss)


class GraphModel:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = self.cfg
        s = self.store
        s.add("gcn/W1", nx.glorot_uniform(rng, c.in_dim, c.hidden))
        s.add("gcn/b1", np.zeros(c.hidden))
        s.add("gcn/ln1_g", np.ones(c.hidden))
        s.add("gcn/ln1_b", np.zeros(c.hidden))
        s.add("gcn/W2", nx.glorot_uniform(rng, c.hidden, c.embed))
        s.add("gcn/b2", np.zeros(c.embed))
        s.add("gcn/ln2_g", np.ones(c.embed))
        s.add("gcn/ln2_b", np.zeros(c.embed))
        s.add("fc/W1", nx.glorot_uniform(rng, c.embed, c.forecast_hidden))
        s.add("fc/b1", np.zeros(c.forecast_hidden))
        s.add("fc/W2", nx.glorot_uniform(rng, c.forecast_hidden, c.in_dim))
        s.add("fc/b2", np.zeros(c.in_dim))
        s.add("vgae/W_mu", nx.glorot_uniform(rng, c.embed, c.latent))
        s.add("vgae/b_mu", np.zeros(c.latent))
        s.add("vgae/W_lv", nx.glorot_uniform(rng, c.embed, c.latent))
        s.add("vgae/b_lv", np.zeros(c.latent))

    # -- parameters --------------------------------------------------------
    @property
    def shared_names(self) -> list[str]:
        return [k for k in self.store if not k.startswith(GATE_PREFIX)]

    def gate_name(self, graph: TemporalGraph) -> str:
        return GATE_PREFIX + graph.key

    def ensure_gates(self, graph: TemporalGraph) -> Tensor:
        name = self.gate_name(graph)
        if name not in self.store:
            self.store.add(name, np.full(graph.M, self.cfg.gate_init))
        t = self.store[name]
        if t.shape != (graph.M,):
            raise nx.ShapeError(f"{name}: {t.shape} gates for {graph.M} edges")
        return t

    def trainable_names(self, batch: GraphBatch) -> list[str]:
        return self.shared_names + [self.gate_name(g) for g in batch.graphs]

    def active_edge_count(self, graphs: Sequence[TemporalGraph]) -> int:
        total = 0
        for g in graphs:
            total += int(sample_gates(self.ensure_gates(g), self.cfg, "eval").data.sum())
        return total

    # -- forward -----------------------------------------------------------
    def encode(self, X: np.ndarray, prop: Tensor) -> Tensor:
        """Two GCN layers: ReLU(LN(P X W1 + b1)) then LN(P H1 W2 + b2).

        The bias sits before LayerNorm; without it LN(P X W) is blind to the
        magnitude of each node's aggregated features.
        """
        p, eps, c = self.store, self.cfg.ln_eps, self.cfg
        n = X.shape[0]
        pre1 = (prop @ Tensor(X)) @ p["gcn/W1"] + nx.expand(p["gcn/b1"], (n, c.hidden))
        h = nx.relu(nx.layer_norm(pre1, p["gcn/ln1_g"], p["gcn/ln1_b"], eps))
        pre2 = (prop @ h) @ p["gcn/W2"] + nx.expand(p["gcn/b2"], (n, c.embed))
        return nx.layer_norm(pre2, p["gcn/ln2_g"], p["gcn/ln2_b"], eps)

    def predict_next(self, H: Tensor) -> Tensor:
        p = self.store
        n = H.shape[0]
        hidden = nx.relu(H @ p["fc/W1"] + nx.expand(p["fc/b1"], (n, self.cfg.forecast_hidden)))
        return hidden @ p["fc/W2"] + nx.expand(p["fc/b2"], (n, self.cfg.in_dim))

    def vgae_heads(self, H_blocks: Tensor) -> tuple[Tensor, Tensor]:
        p = self.store
        shape = H_blocks.shape[:-1] + (self.cfg.latent,)
        mu = H_blocks @ p["vgae/W_mu"] + nx.expand(p["vgae/b_mu"], shape)
        logvar = H_blocks @ p["vgae/W_lv"] + nx.expand(p["vgae/b_lv"], shape)
        return mu, logvar

    def forward(self, batch: GraphBatch, mode: str = "train", noise: Noise | None = None) -> Outputs:
        cfg = self.cfg
        gate_params = [self.ensure_gates(g) for g in batch.graphs]
        log_alpha = nx.concat(gate_params) if len(batch.edges) else Tensor(np.zeros(0))
        if mode == "train":
            if noise is None:
                raise ValueError("train mode needs a Noise sample")
            z = sample_gates(log_alpha, cfg, "train", noise.gates)
            l0 = nx.sum(gate_open_probability(log_alpha, cfg)) * (1.0 / len(batch.graphs))
        else:
            z = sample_gates(log_alpha, cfg, "eval")
            l0 = Tensor(z.data.sum() / len(batch.graphs))
        active = int((z.data > 0.5).sum()) if mode != "train" else int(
            (sample_gates(log_alpha, cfg, "eval").data > 0.5).sum()
        )

        prop = propagation_matrix(mask_adjacency(batch.edges, z, batch.n_nodes))
        H = self.encode(batch.X, prop)

        pred = self.predict_next(H[batch.src])
        target = batch.X[batch.tgt]
        l_forecast = forecast_loss(pred, target)

        H_blocks = H[batch.blocks]
        mu, logvar = self.vgae_heads(H_blocks)
        if mode == "train":
            latent = mu + nx.exp(logvar * 0.5) * Tensor(noise.latent)
        else:
            latent = mu
        logits = latent @ nx.transpose(latent, (0, 2, 1))
        if batch.w > 1:
            bce = weighted_bce_logits(logits, batch.A_ship)
        else:
            bce = Tensor(0.0)
        kl = kl_divergence(mu, logvar)
        l_recon = bce + kl * cfg.beta

        loss = l_forecast + l_recon + l0 * cfg.lam
        return Outputs(
            loss=loss,
            forecast=l_forecast,
            reconstruct=l_recon,
            l0=l0,
            kl=kl,
            active_edges=active,
            prediction=pred.data,
            target=target,
            recon_prob=1.0 / (1.0 + np.exp(-logits.data)),
            embedding=H.data,
        )

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        nx.save_checkpoint(path, self.store.state(), {"model": self.cfg.to_dict(), "format": "aisgraph-model"})

    @classmethod
    def load(cls, path) -> "GraphModel":
        tensors, config = nx.load_checkpoint(path)
        model = cls(ModelConfig(**config["model"]))
        model.store.load_state(tensors)
        return model


def total_loss(l_forecast, l_reconstruct, l0_term, lam: float):
    """L_forecast + L_reconstruct + lam * L0 for Tensors or plain floats."""
    return l_forecast + l_reconstruct + l0_term * lam


def l0_penalty(log_alpha, cfg: ModelConfig, mode: str = "train"):
    """Differentiable expected open-gate count (train) or exact active count (eval)."""
    if mode == "train":
        return nx.sum(gate_open_probability(nx.as_tensor(log_alpha), cfg))
    return float(sample_gates(log_alpha, cfg, "eval").data.sum())
