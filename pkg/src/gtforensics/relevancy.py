"""Gradient-weighted attention relevancy, chained over blocks and reverse-pooled to patches.

Per block: A_bar = mean_heads(grad_A * A) + I, where grad_A is the gradient of
the target-class logit with respect to that block's attention. The chained map
is A_bar_1 @ A_bar_2 @ ... @ A_bar_L. Its class-token row (class column
dropped) scores the pooled clusters, and S @ scores gives per-node relevance.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import netpbm
from .errors import ConfigError
from .graph_transformer import GraphTransformerConfig, forward
from .layers import wrap
from .numerics import ShapeError, Tensor
from .numerics.serialize import atomic_write
from .patch_graph import PatchGrid


@dataclass
class AttentionRecord:
    attention: list[np.ndarray]
    gradients: list[np.ndarray]
    assign: np.ndarray
    logits: np.ndarray
    target: int

    @property
    def blocks(self) -> int:
        return len(self.attention)


@dataclass
class RelevancyMap:
    chained: np.ndarray
    cluster: np.ndarray
    node: np.ndarray
    heatmap: np.ndarray
    record: AttentionRecord | None = field(default=None, repr=False)


def record_attention_gradients(params: Mapping, cfg: GraphTransformerConfig, features: np.ndarray,
                               adj: np.ndarray, target: int,
                               overrides: Mapping[int, np.ndarray] | None = None) -> AttentionRecord:
    """One forward pass keeping every attention map, one backward pass from logit[target]."""
    if target not in (0, 1):
        raise ConfigError(f"target class must be 0 or 1, got {target!r}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected one graph's (N, D) features, got {features.shape}")
    frozen = wrap(params)
    if overrides is not None:
        overrides = {k: Tensor(v, requires_grad=True) for k, v in overrides.items()}
    # a graph root that requires grad, so the attention maps get recorded as tracked nodes
    feats = Tensor(features, requires_grad=True)
    res = forward(frozen, cfg, feats, adj, overrides=overrides)
    res.logits[target].backward()
    grads = [a.grad if a.grad is not None else np.zeros_like(a.data) for a in res.attention]
    return AttentionRecord([a.data.copy() for a in res.attention], grads,
                           res.pool.assign.data.copy(), res.logits.data.copy(), target)


def block_relevance(record: AttentionRecord, block: int) -> np.ndarray:
    """mean over heads of (grad_A * A) + I; no clamping."""
    a, g = record.attention[block], record.gradients[block]
    return (g * a).mean(axis=0) + np.eye(a.shape[-1])


def chain_relevance(record: AttentionRecord) -> np.ndarray:
    out = block_relevance(record, 0)
    for b in range(1, record.blocks):
        out = out @ block_relevance(record, b)
    return out


def reverse_pool(cluster_relevance: np.ndarray, assign: np.ndarray) -> np.ndarray:
    cluster_relevance = np.asarray(cluster_relevance, dtype=np.float64)
    if assign.ndim != 2 or assign.shape[1] != cluster_relevance.shape[0]:
        raise ShapeError(f"assignment {assign.shape} does not match {cluster_relevance.shape[0]} clusters")
    return assign @ cluster_relevance


def normalize_heat(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant input maps to 0.5 everywhere."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def rasterize_heatmap(node_relevance: np.ndarray, grid: PatchGrid) -> np.ndarray:
    node_relevance = np.asarray(node_relevance)
    if node_relevance.size != grid.n:
        raise ShapeError(f"{node_relevance.size} node scores for a {grid.n}-patch grid")
    return normalize_heat(node_relevance).reshape(grid.rows, grid.cols)


def upsample(heatmap: np.ndarray, patch_size: int) -> np.ndarray:
    return np.kron(heatmap, np.ones((patch_size, patch_size)))


def overlay(image: np.ndarray, heatmap: np.ndarray, patch_size: int, alpha: float = 0.5) -> np.ndarray:
    """Blend a red (high) to blue (low) rendering of the heatmap over the image."""
    h = upsample(heatmap, patch_size)
    colour = np.stack([h, np.zeros_like(h), 1.0 - h], axis=-1)
    return (1.0 - alpha) * image + alpha * colour


def explain(params: Mapping, cfg: GraphTransformerConfig, features: np.ndarray, adj: np.ndarray,
            grid: PatchGrid, target: int) -> RelevancyMap:
    record = record_attention_gradients(params, cfg, features, adj, target)
    chained = chain_relevance(record)
    cluster = chained[0, 1:]
    node = reverse_pool(cluster, record.assign)
    return RelevancyMap(chained, cluster, node, rasterize_heatmap(node, grid), record)


def write_outputs(out_dir: str | os.PathLike, rel: RelevancyMap, grid: PatchGrid,
                  image: np.ndarray | None = None, stem: str = "relevancy") -> list[Path]:
    """Heatmap PGMs plus a node-score CSV; an overlay PPM is added when ``image`` is given."""
    out_dir = Path(out_dir)
    paths = [out_dir / f"{stem}_patch.pgm", out_dir / f"{stem}_pixel.pgm", out_dir / f"{stem}.csv"]
    netpbm.save(paths[0], rel.heatmap)
    netpbm.save(paths[1], upsample(rel.heatmap, grid.patch_size))
    rows = ["row,col,value"]
    for i, v in enumerate(rel.node):
        r, c = grid.cell(i)
        rows.append(f"{r},{c},{float(v)!r}")
    atomic_write(paths[2], "\n".join(rows) + "\n")
    if image is not None:
        paths.append(out_dir / f"{stem}_overlay.ppm")
        netpbm.save(paths[3], overlay(image, rel.heatmap, grid.patch_size))
    return paths


def read_relevancy_csv(path: str | os.PathLike) -> np.ndarray:
    lines = Path(path).read_text().strip().split("\n")[1:]
    return np.array([float(line.split(",")[2]) for line in lines])
