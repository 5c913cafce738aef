"""Synthetic forgery task: smooth sinusoid fields, some with a pasted noise region.

A fake is a real field in which a 4-connected set of patches has been replaced
by a high-frequency noise texture around the region's mean colour, with a
one-pixel feather at the region edge. The patch-level mask is ground truth for
localization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from . import manifest as manifest_io
from . import netpbm

MIN_COVER, MAX_COVER = 0.05, 0.30
TEXTURE_SIGMA = 0.2


@dataclass(eq=False)
class SyntheticSample:
    image: np.ndarray
    label: int
    mask: np.ndarray


def smooth_field(rng: np.random.Generator, size: int, channels: int = 3) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] / size
    out = np.empty((size, size, channels))
    for ch in range(channels):
        acc = np.zeros((size, size))
        for _ in range(rng.integers(3, 7)):
            freq = rng.uniform(0.5, 3.0)
            theta = rng.uniform(0, 2 * math.pi)
            phase = rng.uniform(0, 2 * math.pi)
            amp = rng.uniform(0.5, 1.0)
            acc += amp * np.sin(2 * math.pi * freq * (x * math.cos(theta) + y * math.sin(theta)) + phase)
        lo, hi = acc.min(), acc.max()
        out[..., ch] = (acc - lo) / (hi - lo) if hi > lo else 0.5
    return out


def grow_region(rng: np.random.Generator, rows: int, cols: int, size: int) -> np.ndarray:
    """Random 4-connected set of ``size`` grid cells."""
    mask = np.zeros((rows, cols), dtype=bool)
    start = (int(rng.integers(rows)), int(rng.integers(cols)))
    mask[start] = True
    frontier = set()

    def push(r, c):
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and not mask[rr, cc]:
                frontier.add((rr, cc))

    push(*start)
    while mask.sum() < size:
        pick = sorted(frontier)[int(rng.integers(len(frontier)))]
        frontier.discard(pick)
        mask[pick] = True
        push(*pick)
    return mask


def feather_alpha(pixel_mask: np.ndarray) -> np.ndarray:
    """1 inside, 0 outside, 0.5 on the inner one-pixel rim of the region."""
    m = pixel_mask.astype(bool)
    pad = np.pad(m, 1, mode="edge")
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    alpha = m.astype(np.float64)
    alpha[m & ~interior] = 0.5
    return alpha


def make_sample(index: int, label: int, image_size: int, patch_size: int,
                seed: int) -> SyntheticSample:
    rng = np.random.default_rng(seed + index)
    image = smooth_field(rng, image_size)
    rows = cols = image_size // patch_size
    mask = np.zeros((rows, cols), dtype=bool)
    if label == 1:
        n = rows * cols
        lo, hi = math.ceil(MIN_COVER * n), math.floor(MAX_COVER * n)
        mask = grow_region(rng, rows, cols, int(rng.integers(lo, hi + 1)))
        pix = np.kron(mask, np.ones((patch_size, patch_size), dtype=bool))
        region_mean = image[pix].mean(axis=0)
        texture = np.clip(region_mean + rng.normal(0.0, TEXTURE_SIGMA, image.shape), 0.0, 1.0)
        alpha = feather_alpha(pix)[..., None]
        image = alpha * texture + (1.0 - alpha) * image
    # stored images are 8-bit; keep the in-memory copy on the same lattice
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    return SyntheticSample(image, label, mask)


def gen_dataset(n: int, image_size: int, patch_size: int, seed: int) -> list[SyntheticSample]:
    """``n`` samples alternating real/fake; sample i is drawn from seed + i."""
    if n < 2:
        raise ConfigError(f"dataset needs n >= 2, got {n}")
    if image_size % patch_size:
        raise ConfigError(f"image size {image_size} not divisible by patch size {patch_size}")
    return [make_sample(i, i % 2, image_size, patch_size, seed) for i in range(n)]


def write_dataset(samples: list[SyntheticSample], out_dir: str | Path) -> list[dict]:
    out_dir = Path(out_dir)
    entries = []
    for i, s in enumerate(samples):
        img, msk = f"images/{i:05d}.ppm", f"masks/{i:05d}.pgm"
        netpbm.save(out_dir / img, s.image)
        netpbm.save(out_dir / msk, s.mask.astype(np.float64))
        entries.append({"path": img, "label": int(s.label), "mask_path": msk})
    manifest_io.save(out_dir / "manifest.json", entries)
    return entries


def read_dataset(manifest_path: str | Path) -> list[SyntheticSample]:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    out = []
    for e in manifest_io.load(manifest_path):
        image = netpbm.load(root / e["path"])
        if e.get("mask_path"):
            mask = netpbm.load(root / e["mask_path"]) > 0.5
        else:
            mask = None
        out.append(SyntheticSample(image, int(e["label"]), mask))
    return out


def laplacian_energy(image: np.ndarray) -> np.ndarray:
    """Per-pixel |discrete Laplacian| averaged over channels."""
    p = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * image
    return np.abs(lap).mean(axis=-1)
