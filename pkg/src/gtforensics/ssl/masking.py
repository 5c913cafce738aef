"""Blockwise token masking: rectangles on the token grid until a target ratio."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

MIN_BLOCK = 4
MAX_BLOCK_FRACTION = 0.4
ASPECT = (1.0 / 3.0, 3.0)


@dataclass
class MaskSpec:
    mask: np.ndarray
    ratio: float
    seed: int | None = None
    blocks: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())

    @property
    def flat(self) -> np.ndarray:
        return self.mask.reshape(-1)


def _sample_block(rng, rows, cols, target, max_area):
    lo, hi = math.log(ASPECT[0]), math.log(ASPECT[1])
    for _ in range(100):
        aspect = math.exp(rng.uniform(lo, hi))
        h = int(round(math.sqrt(target * aspect)))
        w = int(round(math.sqrt(target / aspect)))
        if (1 <= h <= rows and 1 <= w <= cols and MIN_BLOCK <= h * w <= max_area
                and ASPECT[0] <= h / w <= ASPECT[1]):
            return h, w
    side = max(1, min(rows, cols, int(round(math.sqrt(target)))))
    return side, side


def blockwise_mask(rows: int, cols: int, ratio: float, rng: np.random.Generator | int,
                   seed: int | None = None) -> MaskSpec:
    """Mark axis-aligned token rectangles until coverage >= ``ratio``.

    Block areas are drawn in [4, 0.4 N] but capped by the remaining budget
    (never below 4), aspect log-uniform in [1/3, 3]. The last block can
    overshoot by at most one block's area.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    if isinstance(rng, (int, np.integer)):
        seed, rng = int(rng), np.random.default_rng(int(rng))
    n = rows * cols
    max_area = max(MIN_BLOCK, int(MAX_BLOCK_FRACTION * n))
    mask = np.zeros((rows, cols), dtype=bool)
    blocks = []
    while mask.sum() < ratio * n:
        budget = ratio * n - mask.sum()
        cap = min(max_area, max(MIN_BLOCK, budget))
        h, w = _sample_block(rng, rows, cols, rng.uniform(MIN_BLOCK, cap), cap)
        top = int(rng.integers(0, rows - h + 1))
        left = int(rng.integers(0, cols - w + 1))
        mask[top:top + h, left:left + w] = True
        blocks.append((top, left, h, w))
    return MaskSpec(mask, ratio, seed, blocks)
