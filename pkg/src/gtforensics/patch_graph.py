"""Patch partition, K-nearest-neighbour patch adjacency and GCN normalization."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numerics import ShapeError


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_size: int

    def __post_init__(self):
        s = self.patch_size
        if s < 1 or self.height % s or self.width % s:
            raise ConfigError(
                f"image {self.height}x{self.width} is not divisible into {s}x{s} patches")

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def cols(self) -> int:
        return self.width // self.patch_size

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def cell(self, i: int) -> tuple[int, int]:
        return divmod(i, self.cols)

    def centers(self) -> np.ndarray:
        """(N, 2) patch centers in pixel units, row-major patch order."""
        r, c = np.divmod(np.arange(self.n), self.cols)
        half = self.patch_size / 2.0
        return np.stack([r * self.patch_size + half, c * self.patch_size + half], axis=1)


@dataclass(frozen=True, eq=False)
class Graph:
    features: np.ndarray
    adjacency: np.ndarray
    norm_adjacency: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


def partition_image(image: np.ndarray, patch_size: int) -> tuple[np.ndarray, PatchGrid]:
    """Split an H x W x C image into (N, s, s, C) patches in row-major order."""
    h, w = image.shape[:2]
    grid = PatchGrid(h, w, patch_size)
    s = patch_size
    c = image.shape[2] if image.ndim == 3 else 1
    blocks = image.reshape(grid.rows, s, grid.cols, s, c).swapaxes(1, 2)
    return blocks.reshape(grid.n, s, s, c), grid


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, H, W, C) images to (B, N, s*s*C) flattened patch vectors."""
    b, h, w, c = images.shape
    s = patch_size
    x = images.reshape(b, h // s, s, w // s, s, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // s) * (w // s), s * s * c)


def build_knn_adjacency(grid: PatchGrid, k: int) -> np.ndarray:
    """Union-symmetrized K-NN graph over patch centers.

    Ties in distance go to the lower row-major index.
    """
    n = grid.n
    if not 1 <= k <= n - 1:
        raise ConfigError(f"K={k} must lie in [1, {n - 1}] for a {grid.rows}x{grid.cols} grid")
    ctr = grid.centers()
    d2 = ((ctr[:, None, :] - ctr[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    idx = np.arange(n)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        order = np.lexsort((idx, d2[i]))
        adj[i, order[:k]] = True
    adj |= adj.T
    return adj


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    a_tilde = a + np.eye(a.shape[0])
    deg = a_tilde.sum(axis=1)
    # one rounding per entry: A~_ij / sqrt(d_i d_j)
    return a_tilde / np.sqrt(deg[:, None] * deg[None, :])


def assemble_graph(features: np.ndarray, adj: np.ndarray) -> Graph:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != adj.shape[0]:
        raise ShapeError(f"features {features.shape} do not match adjacency {adj.shape}")
    adj = np.asarray(adj, dtype=bool)
    return Graph(features, adj, normalize_adjacency(adj))


def dump_graph(graph: Graph, k: int) -> str:
    """Text form: "N K", N adjacency bitstrings, then N rows of features."""
    lines = [f"{graph.n} {k}"]
    lines += ["".join("1" if v else "0" for v in row) for row in graph.adjacency]
    lines += [" ".join(repr(float(v)) for v in row) for row in graph.features]
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> tuple[Graph, int]:
    lines = text.strip("\n").split("\n")
    n, k = (int(v) for v in lines[0].split())
    adj = np.array([[ch == "1" for ch in row] for row in lines[1:1 + n]], dtype=bool)
    feats = np.array([[float(v) for v in row.split()] for row in lines[1 + n:1 + 2 * n]])
    return assemble_graph(feats.reshape(n, -1), adj), k


def write_graph_dump(path: str | Path, graph: Graph, k: int) -> None:
    from .numerics.serialize import atomic_write

    atomic_write(path, dump_graph(graph, k))
