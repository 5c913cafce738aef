"""Six perturbation families at five severity levels; level 0 is the identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from ..errors import ConfigError
from ..rng import stream

KINDS = ("saturation", "contrast", "blur", "noise", "pixelation", "block-occlusion")

LEVELS = {
    "saturation": (0.8, 0.6, 0.4, 0.2, 0.0),
    "contrast": (0.85, 0.7, 0.55, 0.4, 0.25),
    "blur": (3, 5, 7, 9, 11),
    "noise": (0.02, 0.04, 0.08, 0.12, 0.16),
    "pixelation": (2, 4, 8, 16, 32),
    "block-occlusion": (2, 4, 8, 12, 16),
}

OCCLUDER = 8
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    level: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if not (isinstance(self.level, (int, np.integer)) and 0 <= self.level <= 5):
            raise ConfigError(f"corruption level must be an integer in 0..5, got {self.level!r}")

    @property
    def parameter(self):
        return None if self.level == 0 else LEVELS[self.kind][self.level - 1]


def _pixelate(image: np.ndarray, factor: int) -> np.ndarray:
    h, w = image.shape[:2]
    gh, gw = -(-h // factor), -(-w // factor)
    pad = np.pad(image, ((0, gh * factor - h), (0, gw * factor - w), (0, 0)), mode="edge")
    coarse = pad.reshape(gh, factor, gw, factor, -1).mean(axis=(1, 3))
    return np.repeat(np.repeat(coarse, factor, axis=0), factor, axis=1)[:h, :w]


def corrupt(image: np.ndarray, spec: CorruptionSpec, seed: int = 0) -> np.ndarray:
    """Apply ``spec`` to an H x W x 3 image in [0, 1].

    Random families draw from a stream keyed on (seed, kind) so that every
    level sees the same noise field / occluder positions; severity is nested.
    """
    if spec.level == 0:
        return image.copy()
    p = spec.parameter
    x = np.asarray(image, dtype=np.float64)
    if spec.kind == "saturation":
        luma = (x @ LUMA)[..., None]
        out = luma + p * (x - luma)
    elif spec.kind == "contrast":
        out = 0.5 + p * (x - 0.5)
    elif spec.kind == "blur":
        out = uniform_filter(x, size=(p, p, 1), mode="nearest")
    elif spec.kind == "noise":
        out = x + p * stream(seed, "corrupt/noise").standard_normal(x.shape)
    elif spec.kind == "pixelation":
        out = _pixelate(x, p)
    else:
        h, w = x.shape[:2]
        rng = stream(seed, "corrupt/block-occlusion")
        tops = rng.integers(0, max(h - OCCLUDER, 0) + 1, size=LEVELS["block-occlusion"][-1])
        lefts = rng.integers(0, max(w - OCCLUDER, 0) + 1, size=LEVELS["block-occlusion"][-1])
        out = x.copy()
        for t, l in zip(tops[:p], lefts[:p]):
            out[t:t + OCCLUDER, l:l + OCCLUDER] = 0.0
    return np.clip(out, 0.0, 1.0)
