"""Cross-view [CLS] and in-view masked-patch self-distillation."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..layers import wrap
from ..numerics import Tensor, clamp_min, log_softmax, soft_cross_entropy, softmax, tsum
from .encoder import ViTEncoderConfig, encode_tokens, head_logits, init_encoder

log = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-12)


@dataclass
class StudentTeacherState:
    cfg: ViTEncoderConfig
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    center: np.ndarray
    tau_s: float = 0.1
    tau_t: float = 0.04
    m_ema: float = 0.996
    rho: float = 0.9
    center_ready: bool = False

    @classmethod
    def create(cls, cfg: ViTEncoderConfig, rng: np.random.Generator, **hp) -> "StudentTeacherState":
        student = init_encoder(cfg, rng)
        return cls(cfg, student, copy.deepcopy(student), np.zeros(cfg.prototypes), **hp)


@dataclass
class AugmentedViews:
    """Views u, v of shape (B, H, W, C) and their token masks (B, N), 1 = masked."""

    u: np.ndarray
    v: np.ndarray
    mask_u: np.ndarray
    mask_v: np.ndarray

    def swapped(self) -> "AugmentedViews":
        return AugmentedViews(self.v, self.u, self.mask_v, self.mask_u)


@dataclass
class LossParts:
    total: Tensor
    cls: Tensor
    mim: Tensor
    teacher_cls_logits: np.ndarray = field(repr=False)
    teacher_cls_probs: np.ndarray = field(repr=False)


def token_logits(params: Mapping[str, Tensor], cfg: ViTEncoderConfig, images: np.ndarray,
                 mask: np.ndarray | None) -> Tensor:
    """Head logits for every token, (B, N + 1, P); index 0 is [CLS]."""
    return head_logits(encode_tokens(params, cfg, images, mask), params)


def student_log_probs(logits: Tensor, tau_s: float) -> Tensor:
    return clamp_min(log_softmax(logits * (1.0 / tau_s), axis=-1), LOG_FLOOR)


def teacher_probs(logits: np.ndarray, center: np.ndarray, tau_t: float) -> np.ndarray:
    return softmax(Tensor((logits - center) / tau_t), axis=-1).data


def cls_term(t_u: np.ndarray, t_v: np.ndarray, s_u: Tensor, s_v: Tensor) -> Tensor:
    """1/2 CE(teacher(v), student(u)) + 1/2 CE(teacher(u), student(v)); s_* are log-probs."""
    return soft_cross_entropy(t_v, s_u) * 0.5 + soft_cross_entropy(t_u, s_v) * 0.5


def mim_view_term(t_patch: np.ndarray, s_patch: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over samples of sum_i m_i CE_i / sum_i m_i (samples with empty masks add 0)."""
    m = np.asarray(mask, dtype=np.float64).reshape(t_patch.shape[:2])
    weights = m / np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    per_token = tsum(s_patch * t_patch, axis=-1) * -1.0
    return tsum(per_token * weights) * (1.0 / m.shape[0])


def mim_term(t_pu, t_pv, s_pu, s_pv, mask_u, mask_v) -> Tensor:
    if not (np.any(mask_u) or np.any(mask_v)):
        log.warning("masked-patch loss: all masks empty, term is 0")
    return mim_view_term(t_pu, s_pu, mask_u) * 0.5 + mim_view_term(t_pv, s_pv, mask_v) * 0.5


def total_loss(state: StudentTeacherState, views: AugmentedViews,
               student: Mapping[str, Tensor] | None = None,
               teacher: Mapping[str, Tensor] | None = None) -> LossParts:
    """L = L_cls + L_mim.

    The student sees the masked views, the teacher the unmasked ones. Teacher
    tensors are detached here, so no gradient can reach them.
    """
    cfg, b = state.cfg, views.u.shape[0]
    student = wrap(state.student if student is None else student)
    teacher = {k: Tensor(v.data if isinstance(v, Tensor) else v)
               for k, v in (state.teacher if teacher is None else teacher).items()}
    images = np.concatenate([views.u, views.v])
    masks = np.concatenate([views.mask_u, views.mask_v]).astype(np.float64)

    s_log = student_log_probs(token_logits(student, cfg, images, masks), state.tau_s)
    t_logits = token_logits(teacher, cfg, images, None).data
    t_prob = teacher_probs(t_logits, state.center, state.tau_t)

    l_cls = cls_term(t_prob[:b, 0], t_prob[b:, 0], s_log[:b, 0], s_log[b:, 0])
    l_mim = mim_term(t_prob[:b, 1:], t_prob[b:, 1:], s_log[:b, 1:], s_log[b:, 1:],
                     views.mask_u, views.mask_v)
    return LossParts(l_cls + l_mim, l_cls, l_mim, t_logits[:, 0], t_prob[:, 0])


def loss_cls(state: StudentTeacherState, views: AugmentedViews) -> float:
    return float(total_loss(state, views).cls.data)


def loss_mim(state: StudentTeacherState, views: AugmentedViews, masks=None) -> float:
    if masks is not None:
        views = AugmentedViews(views.u, views.v, *masks)
    return float(total_loss(state, views).mim.data)


def ema_update_teacher(state: StudentTeacherState,
                       teacher_cls_logits: np.ndarray | None = None) -> StudentTeacherState:
    """theta' <- m theta' + (1 - m) theta; center <- rho c + (1 - rho) mean(logits)."""
    m = state.m_ema
    for k, v in state.student.items():
        state.teacher[k] = m * state.teacher[k] + (1.0 - m) * v
    if teacher_cls_logits is not None:
        batch_mean = np.asarray(teacher_cls_logits).reshape(-1, state.center.size).mean(axis=0)
        state.center = state.rho * state.center + (1.0 - state.rho) * batch_mean
    return state


def warm_start_center(state: StudentTeacherState, teacher_cls_logits: np.ndarray) -> None:
    """Set c to the mean teacher [CLS] logits of a first batch instead of zeros.

    A zero center leaves the shared logit offset in place at tau_t = 0.04, so
    the very first teacher outputs are nearly one-hot on the same prototype.
    """
    state.center = np.asarray(teacher_cls_logits).reshape(-1, state.center.size).mean(axis=0)
    state.center_ready = True


def batch_entropy(probs: np.ndarray) -> float:
    """Entropy of the batch-averaged distribution; ln P when outputs are spread out."""
    p = np.asarray(probs).reshape(-1, probs.shape[-1]).mean(axis=0)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())
