from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..layers import wrap
from ..numerics import NumericError, serialize
from ..optim import Adam, cosine, scaled_lr
from ..rng import stream
from .augment import AugmentConfig, augment_pair
from .encoder import ViTEncoderConfig, encode_tokens, head_logits
from .losses import (AugmentedViews, StudentTeacherState, batch_entropy, ema_update_teacher,
                     total_loss, warm_start_center)
from .masking import blockwise_mask

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    encoder: ViTEncoderConfig = field(default_factory=ViTEncoderConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 64
    lr_base: float = 5e-4
    lr_mult: float = 32.0
    weight_decay: float = 0.0
    mask_ratio: float = 0.4
    tau_s: float = 0.1
    tau_t: float = 0.04
    m_ema: float = 0.996
    rho: float = 0.9

    @property
    def lr(self) -> float:
        return scaled_lr(self.batch_size, self.lr_base, self.lr_mult)


@dataclass
class EpochStats:
    epoch: int
    loss_cls: float
    loss_mim: float
    total: float
    teacher_entropy: float
    teacher_entropy_min: float = float("nan")


def make_views(images: np.ndarray, cfg: PretrainConfig, seed: int, tag: str) -> AugmentedViews:
    us, vs, mus, mvs = [], [], [], []
    g = cfg.encoder.grid
    aug_rng, mask_rng = stream(seed, f"augment/{tag}"), stream(seed, f"mask/{tag}")
    for img in images:
        u, v = augment_pair(img, aug_rng, cfg.augment)
        us.append(u)
        vs.append(v)
        mus.append(blockwise_mask(g, g, cfg.mask_ratio, mask_rng).flat)
        mvs.append(blockwise_mask(g, g, cfg.mask_ratio, mask_rng).flat)
    return AugmentedViews(np.stack(us), np.stack(vs),
                          np.stack(mus).astype(np.float64), np.stack(mvs).astype(np.float64))


def _first_non_finite(state: StudentTeacherState, grads: dict) -> str:
    for name, arr in state.student.items():
        if not np.all(np.isfinite(arr)):
            return f"student parameter {name!r}"
    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            return f"gradient of {name!r}"
    return "loss value"


def pretrain(images: np.ndarray, cfg: PretrainConfig, epochs: int, seed: int,
             state: StudentTeacherState | None = None) -> tuple[StudentTeacherState, list[EpochStats]]:
    """Self-distillation pre-training; returns the final state and per-epoch means."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("pre-training needs a non-empty dataset")
    if state is None:
        state = StudentTeacherState.create(cfg.encoder, stream(seed, "init/encoder"),
                                           tau_s=cfg.tau_s, tau_t=cfg.tau_t,
                                           m_ema=cfg.m_ema, rho=cfg.rho)
    opt = Adam(state.student, weight_decay=cfg.weight_decay)
    n, bs = len(images), min(cfg.batch_size, len(images))
    steps_per_epoch = -(-n // bs)
    total_steps, step = epochs * steps_per_epoch, 0
    lr_peak = scaled_lr(bs, cfg.lr_base, cfg.lr_mult)
    trace = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = stream(seed, f"shuffle/{epoch}").permutation(n)
        sums, h_min = np.zeros(4), np.inf
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            views = make_views(images[idx], cfg, seed, f"{epoch}/{b}")
            if not state.center_ready:
                cls = encode_tokens(wrap(state.teacher), cfg.encoder, views.u)[:, 0]
                warm_start_center(state, head_logits(cls, state.teacher).data)
            tracked = wrap(state.student, requires_grad=True)
            parts = total_loss(state, views, student=tracked)
            parts.total.backward()
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for k, t in tracked.items()}
            if not np.isfinite(parts.total.data):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}: "
                                   f"first non-finite tensor is {_first_non_finite(state, grads)}")
            opt.step(state.student, grads, cosine(step, total_steps, lr_peak, 0.1 * lr_peak))
            ema_update_teacher(state, parts.teacher_cls_logits)
            step += 1
            w = len(idx) / n
            h = batch_entropy(parts.teacher_cls_probs)
            h_min = min(h_min, h)
            sums += w * np.array([parts.cls.item(), parts.mim.item(), parts.total.item(), h])
        stats = EpochStats(epoch, *map(float, sums), float(h_min))
        trace.append(stats)
        log.info("pretrain epoch %d: cls %.4f mim %.4f total %.4f teacher-H %.3f (min %.3f) (%.1fs)",
                 epoch, stats.loss_cls, stats.loss_mim, stats.total, stats.teacher_entropy,
                 stats.teacher_entropy_min,
                 time.perf_counter() - t0)
    return state, trace


def trace_csv(trace: list[EpochStats]) -> str:
    rows = ["epoch,loss_cls,loss_mim,total"]
    rows += [f"{s.epoch},{s.loss_cls:.10g},{s.loss_mim:.10g},{s.total:.10g}" for s in trace]
    return "\n".join(rows) + "\n"


def entropy_csv(trace: list[EpochStats]) -> str:
    """Teacher batch entropy per epoch: weighted mean and minimum over batches."""
    rows = ["epoch,teacher_entropy,teacher_entropy_min"]
    rows += [f"{s.epoch},{s.teacher_entropy:.10g},{s.teacher_entropy_min:.10g}" for s in trace]
    return "\n".join(rows) + "\n"


def save_encoder(directory: str | Path, params: dict[str, np.ndarray], cfg: ViTEncoderConfig) -> None:
    directory = Path(directory)
    serialize.save(directory / "encoder.f64", params)
    manifest = {"kind": "encoder", "tensors": list(params), "config": cfg.to_dict()}
    serialize.atomic_write(directory / "encoder.json", json.dumps(manifest, indent=1) + "\n")


def load_encoder(directory: str | Path) -> tuple[dict[str, np.ndarray], ViTEncoderConfig]:
    directory = Path(directory)
    manifest = json.loads((directory / "encoder.json").read_text())
    tensors = serialize.load(directory / "encoder.f64")
    if list(tensors) != manifest["tensors"]:
        raise serialize.CheckpointError("encoder tensor order does not match its manifest")
    return tensors, ViTEncoderConfig(**manifest["config"])


def config_dict(cfg: PretrainConfig) -> dict:
    return asdict(cfg)
