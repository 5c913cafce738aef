"""Parameter-dict transformer building blocks shared by the encoder and classifier.

Parameters live in flat ``{name: array}`` dicts; forward functions take the
same dict with values wrapped as :class:`Tensor`.
"""
from __future__ import annotations

import math
from typing import Mapping, MutableSequence

import numpy as np

from .numerics import Tensor, gelu, layer_norm, softmax

LN_EPS = 1e-6


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def init_block(rng, prefix: str, dim: int, mlp_dim: int, bias: bool) -> dict[str, np.ndarray]:
    p = {
        f"{prefix}.ln1.g": np.ones(dim), f"{prefix}.ln1.b": np.zeros(dim),
        f"{prefix}.attn.wq": trunc_normal(rng, (dim, dim)),
        f"{prefix}.attn.wk": trunc_normal(rng, (dim, dim)),
        f"{prefix}.attn.wv": trunc_normal(rng, (dim, dim)),
        f"{prefix}.attn.wo": trunc_normal(rng, (dim, dim)),
        f"{prefix}.ln2.g": np.ones(dim), f"{prefix}.ln2.b": np.zeros(dim),
        f"{prefix}.mlp.w1": trunc_normal(rng, (dim, mlp_dim)), f"{prefix}.mlp.b1": np.zeros(mlp_dim),
        f"{prefix}.mlp.w2": trunc_normal(rng, (mlp_dim, dim)), f"{prefix}.mlp.b2": np.zeros(dim),
    }
    if bias:
        for k in ("bq", "bk", "bv", "bo"):
            p[f"{prefix}.attn.{k}"] = np.zeros(dim)
    return p


def _affine(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = x @ w
    return y if b is None else y + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return x.reshape(*lead, t, heads, d // heads).swapaxes(-2, -3)


def msa(z: Tensor, p: Mapping[str, Tensor], prefix: str, heads: int,
        override: Tensor | np.ndarray | None = None,
        records: MutableSequence[Tensor] | None = None) -> Tensor:
    """Multi-head self-attention, heads concatenated and projected by W^O.

    ``override`` replaces the softmax attention (shape ... x heads x T x T);
    every attention tensor used is appended to ``records``.
    """
    *lead, t, d = z.shape
    q = _split_heads(_affine(z, p[f"{prefix}.wq"], p.get(f"{prefix}.bq")), heads)
    k = _split_heads(_affine(z, p[f"{prefix}.wk"], p.get(f"{prefix}.bk")), heads)
    v = _split_heads(_affine(z, p[f"{prefix}.wv"], p.get(f"{prefix}.bv")), heads)
    if override is None:
        attn = softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // heads)), axis=-1)
    else:
        attn = override if isinstance(override, Tensor) else Tensor(override)
    if records is not None:
        records.append(attn)
    out = (attn @ v).swapaxes(-2, -3).reshape(*lead, t, d)
    return _affine(out, p[f"{prefix}.wo"], p.get(f"{prefix}.bo"))


def block(z: Tensor, p: Mapping[str, Tensor], prefix: str, heads: int,
          override=None, records=None) -> Tensor:
    """Pre-norm residual block: z' = MSA(LN(z)) + z; z'' = MLP(LN(z')) + z'."""
    h = layer_norm(z, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], LN_EPS)
    z = msa(h, p, f"{prefix}.attn", heads, override, records) + z
    h = layer_norm(z, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], LN_EPS)
    h = gelu(h @ p[f"{prefix}.mlp.w1"] + p[f"{prefix}.mlp.b1"])
    return h @ p[f"{prefix}.mlp.w2"] + p[f"{prefix}.mlp.b2"] + z


def wrap(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad, name=k)
            for k, v in params.items()}
