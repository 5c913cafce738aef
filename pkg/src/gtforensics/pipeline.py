"""End-to-end glue between on-disk datasets and the frozen-feature classifier."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import CorruptionSpec, KINDS, accuracy, auc, corrupt, gen_dataset, read_dataset
from .errors import DataError
from .graph_transformer import (
    FeatureWhitener,
    GraphTransformerConfig,
    load_classifier,
    predict_proba,
    train_classifier,
)
from .patch_graph import PatchGrid, build_knn_adjacency
from .ssl import extract_features, load_encoder
from .ssl.encoder import ViTEncoderConfig

log = logging.getLogger(__name__)


@dataclass
class Split:
    images: np.ndarray
    labels: np.ndarray
    masks: np.ndarray | None


def split_from_samples(samples) -> Split:
    masks = None
    if all(s.mask is not None for s in samples):
        masks = np.stack([s.mask for s in samples])
    return Split(np.stack([s.image for s in samples]),
                 np.array([s.label for s in samples], dtype=int), masks)


def synthetic_splits(cfg: RunConfig) -> tuple[Split, Split]:
    train = gen_dataset(cfg.n_train, cfg.image_size, cfg.patch_size, cfg.seed)
    test = gen_dataset(cfg.n_test, cfg.image_size, cfg.patch_size, cfg.seed + cfg.test_seed_offset)
    return split_from_samples(train), split_from_samples(test)


def load_split(manifest: str | Path) -> Split:
    return split_from_samples(read_dataset(manifest))


def grid_and_adjacency(cfg: RunConfig | GraphTransformerConfig, image_size: int,
                       patch_size: int) -> tuple[PatchGrid, np.ndarray]:
    grid = PatchGrid(image_size, image_size, patch_size)
    return grid, build_knn_adjacency(grid, cfg.k)


def require_encoder(directory: str | Path) -> tuple[dict, ViTEncoderConfig]:
    directory = Path(directory)
    if not (directory / "encoder.json").exists():
        raise DataError(f"no encoder checkpoint in {directory}; run pretrain first")
    return load_encoder(directory)


def require_classifier(directory: str | Path):
    directory = Path(directory)
    if not (directory / "classifier.json").exists():
        raise DataError(f"no classifier checkpoint in {directory}; run train first")
    return load_classifier(directory)


def patch_features(encoder: dict, enc_cfg: ViTEncoderConfig, images: np.ndarray) -> np.ndarray:
    if images.shape[1:3] != (enc_cfg.image_size, enc_cfg.image_size):
        raise DataError(f"images of size {images.shape[1:3]} do not match the encoder's "
                        f"{enc_cfg.image_size}x{enc_cfg.image_size} input")
    return extract_features(encoder, enc_cfg, images)[1]


def fit_classifier(encoder: dict, enc_cfg: ViTEncoderConfig, cfg: RunConfig, train: Split,
                   test: Split | None = None):
    """Frozen features, whitening fitted on training nodes, then classifier training."""
    gcfg = cfg.classifier_config()
    _, adj = grid_and_adjacency(gcfg, enc_cfg.image_size, enc_cfg.patch_size)
    feats = patch_features(encoder, enc_cfg, train.images)
    whitener = FeatureWhitener.fit(feats)
    test_x = test_y = None
    if test is not None:
        test_x, test_y = whitener(patch_features(encoder, enc_cfg, test.images)), test.labels
    params, trace = train_classifier(whitener(feats), train.labels, adj, gcfg, cfg.train_config(),
                                     cfg.seed, test_x, test_y)
    return params, gcfg, whitener, trace


def score(encoder, enc_cfg, params, gcfg, whitener, images: np.ndarray) -> np.ndarray:
    _, adj = grid_and_adjacency(gcfg, enc_cfg.image_size, enc_cfg.patch_size)
    return predict_proba(params, gcfg, whitener(patch_features(encoder, enc_cfg, images)), adj)


def metrics(proba: np.ndarray, labels: np.ndarray) -> dict:
    out = {"accuracy": accuracy((proba > 0.5).astype(int), labels)}
    out["auc"] = auc(proba, labels) if len(set(labels.tolist())) == 2 else float("nan")
    return out


def corruption_sweep(encoder, enc_cfg, params, gcfg, whitener, split: Split, kinds=KINDS,
                     seed: int = 0, levels=range(1, 6)) -> list[dict]:
    """A clean row, then one row per (kind, level); image i is corrupted with seed + i."""
    rows = []
    clean = metrics(score(encoder, enc_cfg, params, gcfg, whitener, split.images), split.labels)
    rows.append({"kind": "clean", "level": 0, **clean})
    for kind in kinds:
        for level in levels:
            spec = CorruptionSpec(kind, level)
            imgs = np.stack([corrupt(img, spec, seed + i) for i, img in enumerate(split.images)])
            m = metrics(score(encoder, enc_cfg, params, gcfg, whitener, imgs), split.labels)
            rows.append({"kind": kind, "level": level, **m})
            log.info("eval %s level %d: acc %.4f auc %.4f", kind, level, m["accuracy"], m["auc"])
    return rows


def sweep_csv(rows: list[dict]) -> str:
    lines = ["kind,level,accuracy,auc"]
    lines += [f"{r['kind']},{r['level']},{r['accuracy']!r},{r['auc']!r}" for r in rows]
    return "\n".join(lines) + "\n"
