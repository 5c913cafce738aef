from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.6, 1.0)
    flip_p: float = 0.5
    brightness: tuple[float, float] = (0.8, 1.25)


IDENTITY = AugmentConfig(crop_scale=(1.0, 1.0), flip_p=0.0, brightness=(1.0, 1.0))


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy, wx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    h, w = image.shape[:2]
    scale = rng.uniform(*cfg.crop_scale)
    ch = max(1, min(h, int(round(np.sqrt(scale) * h))))
    cw = max(1, min(w, int(round(np.sqrt(scale) * w))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = resize_bilinear(image[top:top + ch, left:left + cw], h, w)
    if rng.random() < cfg.flip_p:
        out = out[:, ::-1]
    factor = rng.uniform(*cfg.brightness)
    return np.clip(out * factor, 0.0, 1.0)


def augment_pair(image: np.ndarray, seed: int | np.random.Generator,
                 cfg: AugmentConfig = AugmentConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views (u, v); deterministic given ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return augment(image, rng, cfg), augment(image, rng, cfg)
