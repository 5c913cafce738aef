"""Toy pre-norm ViT encoder with a [CLS] token and a prototype projection head."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from ..errors import ConfigError
from ..layers import LN_EPS, block, init_block, trunc_normal, wrap
from ..numerics import ShapeError, Tensor, concat, gelu, layer_norm, log_softmax, softmax
from ..patch_graph import patchify

PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


@dataclass(frozen=True)
class ViTEncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    channels: int = 3
    dim: int = 64
    heads: int = 4
    depth: int = 4
    mlp_dim: int = 128
    head_hidden: int = 128
    prototypes: int = 256

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.dim % self.heads:
            raise ConfigError(f"embedding dim {self.dim} not divisible by {self.heads} heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid ** 2

    def to_dict(self) -> dict:
        return asdict(self)


def init_encoder(cfg: ViTEncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    patch_in = cfg.patch_size ** 2 * cfg.channels
    p = {
        "patch_embed.w": trunc_normal(rng, (patch_in, cfg.dim)),
        "patch_embed.b": np.zeros(cfg.dim),
        "cls_token": trunc_normal(rng, (cfg.dim,)),
        "mask_token": trunc_normal(rng, (cfg.dim,)),
        "pos_embed": trunc_normal(rng, (cfg.tokens + 1, cfg.dim)),
    }
    for i in range(cfg.depth):
        p.update(init_block(rng, f"blocks.{i}", cfg.dim, cfg.mlp_dim, bias=True))
    p["norm.g"], p["norm.b"] = np.ones(cfg.dim), np.zeros(cfg.dim)
    dims = (cfg.dim, cfg.head_hidden, cfg.head_hidden, cfg.prototypes)
    for j in range(3):
        # fan-in scaled so initial prototype logits are O(1), not uniform
        p[f"head.w{j + 1}"] = trunc_normal(rng, (dims[j], dims[j + 1]), dims[j] ** -0.5)
        p[f"head.b{j + 1}"] = np.zeros(dims[j + 1])
    return p


def embed_tokens(params: Mapping[str, Tensor], cfg: ViTEncoderConfig, images: np.ndarray,
                 mask: np.ndarray | None = None) -> Tensor:
    """Token sequence entering the first block: [CLS; patches] + positions."""
    if images.shape[1:] != (cfg.image_size, cfg.image_size, cfg.channels):
        raise ShapeError(f"view of shape {images.shape[1:]} does not match encoder config "
                         f"{(cfg.image_size, cfg.image_size, cfg.channels)}")
    b = images.shape[0]
    x = (patchify(images, cfg.patch_size) - PIXEL_MEAN) / PIXEL_STD
    tok = x @ params["patch_embed.w"] + params["patch_embed.b"]
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(b, cfg.tokens, 1)
        tok = tok * (1.0 - m) + params["mask_token"] * m
    cls = params["cls_token"].reshape(1, 1, cfg.dim) * np.ones((b, 1, 1))
    return concat([cls, tok], axis=1) + params["pos_embed"]


def encode_tokens(params: Mapping[str, Tensor], cfg: ViTEncoderConfig, images: np.ndarray,
                  mask: np.ndarray | None = None) -> Tensor:
    z = embed_tokens(params, cfg, images, mask)
    for i in range(cfg.depth):
        z = block(z, params, f"blocks.{i}", cfg.heads)
    return layer_norm(z, params["norm.g"], params["norm.b"], LN_EPS)


def encode(params: Mapping, cfg: ViTEncoderConfig, images: np.ndarray,
           mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Encode a batch (B, H, W, C) or a single view (H, W, C).

    Returns the [CLS] embedding and the patch embeddings after the final LN;
    masked positions (mask == 1) enter the blocks as the learned mask token.
    """
    single = images.ndim == 3
    if single:
        images = images[None]
        mask = None if mask is None else np.asarray(mask)[None]
    z = encode_tokens(wrap(params), cfg, images, mask)
    cls, patches = z[:, 0, :], z[:, 1:, :]
    if single:
        cls, patches = cls[0], patches[0]
    return cls, patches


def head_logits(embedding: Tensor, params: Mapping) -> Tensor:
    """Shared 3-layer projection head; the same weights serve [CLS] and patch tokens."""
    params = wrap(params)
    h = gelu(embedding @ params["head.w1"] + params["head.b1"])
    h = gelu(h @ params["head.w2"] + params["head.b2"])
    return h @ params["head.w3"] + params["head.b3"]


def project(embedding: Tensor, params: Mapping, temperature: float,
            center: np.ndarray | None = None) -> Tensor:
    """softmax((head(embedding) - center) / temperature); center only on the teacher path."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    logits = head_logits(embedding, params)
    if center is not None:
        logits = logits - center
    return softmax(logits * (1.0 / temperature), axis=-1)


def project_log(embedding: Tensor, params: Mapping, temperature: float) -> Tensor:
    return log_softmax(head_logits(embedding, params) * (1.0 / temperature), axis=-1)


def extract_features(params: Mapping[str, np.ndarray], cfg: ViTEncoderConfig,
                     images: np.ndarray, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Frozen-extractor pass: ([CLS] (n, D), patch tokens (n, N, D))."""
    cls_out, patch_out = [], []
    frozen = wrap(params)
    for i in range(0, len(images), batch):
        c, p = encode(frozen, cfg, np.asarray(images[i:i + batch]))
        cls_out.append(c.data)
        patch_out.append(p.data)
    return np.concatenate(cls_out), np.concatenate(patch_out)
