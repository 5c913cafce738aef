"""GCN layers over the patch graph, min-cut pooling, and a [CLS] Transformer head."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .data.metrics import accuracy, auc
from .errors import ConfigError
from .layers import LN_EPS, block, init_block, trunc_normal, wrap
from .numerics import (
    ShapeError,
    Tensor,
    concat,
    layer_norm,
    log_softmax,
    relu,
    serialize,
    softmax,
    sqrt,
    tsum,
)
from .optim import Adam, cosine
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphTransformerConfig:
    in_dim: int = 64
    k: int = 8
    gcn_layers: int = 3
    blocks: int = 3
    heads: int = 4
    dim: int = 128
    mlp_dim: int = 256
    clusters: int = 16
    aux_weight: float = 1.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"D={self.dim} is not divisible by {self.heads} heads")
        for name in ("in_dim", "gcn_layers", "blocks", "heads", "dim", "mlp_dim", "clusters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def init_classifier(cfg: GraphTransformerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    d_in = cfg.in_dim
    for layer in range(cfg.gcn_layers):
        p[f"gcn.{layer}.w"] = rng.normal(0.0, math.sqrt(2.0 / d_in), (d_in, cfg.dim))
        d_in = cfg.dim
    p["pool.w"] = rng.normal(0.0, math.sqrt(1.0 / cfg.dim), (cfg.dim, cfg.clusters))
    p["pool.b"] = np.zeros(cfg.clusters)
    p["cls_token"] = trunc_normal(rng, (cfg.dim,))
    for i in range(cfg.blocks):
        p.update(init_block(rng, f"blocks.{i}", cfg.dim, cfg.mlp_dim, bias=False))
    p["norm.g"], p["norm.b"] = np.ones(cfg.dim), np.zeros(cfg.dim)
    p["head.w"] = trunc_normal(rng, (cfg.dim, 2))
    p["head.b"] = np.zeros(2)
    return p


@dataclass
class FeatureWhitener:
    """ZCA map fitted on unlabeled training node features, applied per node before the GCN.

    Texture cues sit in low-variance directions of the frozen token space;
    whitening lifts them to the same scale as the dominant colour directions.
    """

    mean: np.ndarray
    matrix: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, eps: float = 1e-6) -> "FeatureWhitener":
        flat = np.asarray(features, dtype=np.float64).reshape(-1, np.shape(features)[-1])
        mu = flat.mean(axis=0)
        w, v = np.linalg.eigh(np.cov(flat - mu, rowvar=False))
        w = np.maximum(w, 0.0) + eps * max(w.max(), 1e-300)
        return cls(mu, (v / np.sqrt(w)) @ v.T)

    @classmethod
    def identity(cls, dim: int) -> "FeatureWhitener":
        return cls(np.zeros(dim), np.eye(dim))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.mean.size:
            raise ShapeError(f"features of width {features.shape[-1]} for a "
                             f"{self.mean.size}-wide whitener")
        return (features - self.mean) @ self.matrix


def gcn_forward(features, norm_adj: np.ndarray, params: Mapping, cfg: GraphTransformerConfig) -> Tensor:
    """H_{l+1} = ReLU(A_hat H_l W_l), H_0 = F. Features may be (N, D) or (B, N, D)."""
    params = wrap(params)
    h = features if isinstance(features, Tensor) else Tensor(features)
    if h.shape[-1] != params["gcn.0.w"].shape[0]:
        raise ShapeError(f"node features of width {h.shape[-1]} do not match "
                         f"first GCN weight {params['gcn.0.w'].shape}")
    if h.shape[-2] != norm_adj.shape[0]:
        raise ShapeError(f"{h.shape[-2]} nodes but adjacency is {norm_adj.shape}")
    a_hat = Tensor(norm_adj)
    for layer in range(cfg.gcn_layers):
        h = relu((a_hat @ h) @ params[f"gcn.{layer}.w"])
    return h


@dataclass
class PoolResult:
    pooled: Tensor
    pooled_adj: np.ndarray
    assign: Tensor
    cut_loss: Tensor
    ortho_loss: Tensor


def mincut_losses(s: Tensor, adj: np.ndarray) -> tuple[Tensor, Tensor]:
    """Cut loss -Tr(S^T A~ S) / Tr(S^T D~ S) and orthogonality loss, averaged over the batch.

    A~ = A + I, D~ its degree matrix.
    """
    a_tilde = np.asarray(adj, dtype=np.float64) + np.eye(adj.shape[0])
    deg = a_tilde.sum(axis=1)[:, None]
    num = tsum(s * (Tensor(a_tilde) @ s), axis=(-2, -1))
    den = tsum(s * s * deg, axis=(-2, -1))
    cut = num / den * -1.0
    ss = s.swapaxes(-1, -2) @ s
    kc = s.shape[-1]
    fro = sqrt(tsum(ss * ss, axis=(-2, -1)))
    if ss.ndim == 3:
        fro = fro.reshape(-1, 1, 1)
    diff = ss / fro - np.eye(kc) / math.sqrt(kc)
    ortho = sqrt(tsum(diff * diff, axis=(-2, -1)))
    return cut.mean(), ortho.mean()


def coarsen_adjacency(s: np.ndarray, norm_adj: np.ndarray) -> np.ndarray:
    """S^T A_hat S with the diagonal zeroed, then symmetrically renormalized."""
    out = np.swapaxes(s, -1, -2) @ norm_adj @ s
    idx = np.arange(out.shape[-1])
    out[..., idx, idx] = 0.0
    d = np.sqrt(out.sum(axis=-1))[..., :, None] + 1e-15
    return out / d / np.swapaxes(d, -1, -2)


def mincut_pool(h: Tensor, norm_adj: np.ndarray, adj: np.ndarray, params: Mapping) -> PoolResult:
    params = wrap(params)
    n, n_p = h.shape[-2], params["pool.w"].shape[1]
    if n < n_p:
        raise ConfigError(f"cannot pool {n} nodes into {n_p} clusters")
    s = softmax(h @ params["pool.w"] + params["pool.b"], axis=-1)
    pooled = s.swapaxes(-1, -2) @ h
    cut, ortho = mincut_losses(s, adj)
    return PoolResult(pooled, coarsen_adjacency(s.data, norm_adj), s, cut, ortho)


def transformer_forward(tokens: Tensor, params: Mapping, cfg: GraphTransformerConfig,
                        overrides: Mapping[int, Tensor | np.ndarray] | None = None
                        ) -> tuple[Tensor, list[Tensor]]:
    """z_0 = [x_class; h_1; ...]; pre-norm blocks; y = LN(z_L[0]); logits = y W + b.

    No positional term is added to the node tokens. Returns logits and the
    attention tensor of every block (heads x T x T per sample).
    """
    params = wrap(params)
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    lead = tokens.shape[:-2]
    cls = params["cls_token"].reshape(*(1,) * len(lead), 1, cfg.dim) * np.ones(lead + (1, 1))
    z = concat([cls, tokens], axis=-2)
    records: list[Tensor] = []
    for i in range(cfg.blocks):
        ov = None if overrides is None else overrides.get(i)
        z = block(z, params, f"blocks.{i}", cfg.heads, ov, records)
    y = layer_norm(z[..., 0, :], params["norm.g"], params["norm.b"], LN_EPS)
    return y @ params["head.w"] + params["head.b"], records


@dataclass
class ForwardResult:
    logits: Tensor
    attention: list[Tensor]
    pool: PoolResult
    nodes: Tensor


def forward(params: Mapping, cfg: GraphTransformerConfig, features, adj: np.ndarray,
            norm_adj: np.ndarray | None = None, overrides=None) -> ForwardResult:
    from .patch_graph import normalize_adjacency

    params = wrap(params)
    if norm_adj is None:
        norm_adj = normalize_adjacency(adj)
    h = gcn_forward(features, norm_adj, params, cfg)
    pool = mincut_pool(h, norm_adj, adj, params)
    logits, attn = transformer_forward(pool.pooled, params, cfg, overrides)
    return ForwardResult(logits, attn, pool, h)


def classifier_loss(logits: Tensor, labels, cut_loss, ortho_loss, aux_weight: float = 1.0) -> Tensor:
    """Softmax cross-entropy (mean over the batch) + aux_weight * (L_cut + L_ortho)."""
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError(f"labels must be 0/1, got {labels}")
    lp = log_softmax(logits.reshape(len(labels), 2), axis=-1)
    onehot = np.eye(2)[labels]
    ce = tsum(lp * onehot) * (-1.0 / len(labels))
    return ce + (cut_loss + ortho_loss) * aux_weight


def predict_proba(params, cfg, features: np.ndarray, adj: np.ndarray, batch: int = 64) -> np.ndarray:
    """P(fake) per sample."""
    from .patch_graph import normalize_adjacency

    norm_adj = normalize_adjacency(adj)
    frozen = wrap(params)
    out = []
    for i in range(0, len(features), batch):
        res = forward(frozen, cfg, features[i:i + batch], adj, norm_adj)
        out.append(softmax(res.logits, axis=-1).data[:, 1])
    return np.concatenate(out)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0


def evaluate(params, cfg, features, labels, adj) -> dict:
    from .patch_graph import normalize_adjacency

    norm_adj = normalize_adjacency(adj)
    frozen = wrap(params)
    probs, losses = [], []
    for i in range(0, len(features), 128):
        res = forward(frozen, cfg, features[i:i + 128], adj, norm_adj)
        lab = labels[i:i + 128]
        losses.append(classifier_loss(res.logits, lab, res.pool.cut_loss, res.pool.ortho_loss,
                                      cfg.aux_weight).item() * len(lab))
        probs.append(softmax(res.logits, axis=-1).data[:, 1])
    p = np.concatenate(probs)
    labels = np.asarray(labels)
    return {"accuracy": accuracy((p > 0.5).astype(int), labels),
            "auc": auc(p, labels) if len(set(labels.tolist())) == 2 else float("nan"),
            "loss": float(np.sum(losses) / len(labels)), "proba": p}


def train_classifier(train_x: np.ndarray, train_y, adj: np.ndarray, cfg: GraphTransformerConfig,
                     tcfg: TrainConfig, seed: int, test_x: np.ndarray | None = None, test_y=None,
                     params: dict | None = None) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Fit on frozen node features (n, N, D); returns params and per-epoch metric rows."""
    from .patch_graph import normalize_adjacency

    train_y = np.asarray(train_y, dtype=int)
    if params is None:
        params = init_classifier(cfg, stream(seed, "init/classifier"))
    norm_adj = normalize_adjacency(adj)
    opt = Adam(params, weight_decay=tcfg.weight_decay)
    n = len(train_x)
    steps = -(-n // tcfg.batch_size)
    total, step = tcfg.epochs * steps, 0
    trace = []
    for epoch in range(1, tcfg.epochs + 1):
        order = stream(seed, f"classifier/shuffle/{epoch}").permutation(n)
        for b in range(steps):
            idx = order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
            tracked = wrap(params, requires_grad=True)
            res = forward(tracked, cfg, train_x[idx], adj, norm_adj)
            loss = classifier_loss(res.logits, train_y[idx], res.pool.cut_loss,
                                   res.pool.ortho_loss, cfg.aux_weight)
            loss.backward()
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for k, t in tracked.items()}
            opt.step(params, grads, cosine(step, total, tcfg.lr, 0.05 * tcfg.lr))
            step += 1
        splits = [("train", train_x, train_y)]
        if test_x is not None:
            splits.append(("test", test_x, np.asarray(test_y, dtype=int)))
        for name, x, y in splits:
            m = evaluate(params, cfg, x, y, adj)
            trace.append({"epoch": epoch, "split": name, "accuracy": m["accuracy"],
                          "auc": m["auc"], "loss": m["loss"]})
        log.info("classifier epoch %d: %s", epoch, "  ".join(
            f"{r['split']} acc {r['accuracy']:.3f} auc {r['auc']:.3f} loss {r['loss']:.4f}"
            for r in trace[-len(splits):]))
    return params, trace


def metric_csv(trace: list[dict]) -> str:
    rows = ["epoch,split,accuracy,auc,loss"]
    rows += [f"{r['epoch']},{r['split']},{r['accuracy']:.10g},{r['auc']:.10g},{r['loss']:.10g}"
             for r in trace]
    return "\n".join(rows) + "\n"


def save_classifier(directory: str | Path, params: dict[str, np.ndarray],
                    cfg: GraphTransformerConfig, whitener: FeatureWhitener | None = None) -> None:
    directory = Path(directory)
    whitener = whitener or FeatureWhitener.identity(cfg.in_dim)
    tensors = dict(params)
    tensors["whiten.mean"], tensors["whiten.matrix"] = whitener.mean, whitener.matrix
    serialize.save(directory / "classifier.f64", tensors)
    manifest = {"kind": "classifier", "tensors": list(tensors), "config": cfg.to_dict()}
    serialize.atomic_write(directory / "classifier.json", json.dumps(manifest, indent=1) + "\n")


def load_classifier(directory: str | Path
                    ) -> tuple[dict[str, np.ndarray], GraphTransformerConfig, FeatureWhitener]:
    directory = Path(directory)
    manifest = json.loads((directory / "classifier.json").read_text())
    tensors = serialize.load(directory / "classifier.f64")
    if list(tensors) != manifest["tensors"]:
        raise serialize.CheckpointError("classifier tensor order does not match its manifest")
    whitener = FeatureWhitener(tensors.pop("whiten.mean"), tensors.pop("whiten.matrix"))
    return tensors, GraphTransformerConfig(**manifest["config"]), whitener
