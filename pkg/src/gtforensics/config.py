"""Flat run configuration: one JSON object, overridable with ``key=value`` pairs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .graph_transformer import GraphTransformerConfig, TrainConfig
from .optim import scaled_lr
from .ssl import PretrainConfig, ViTEncoderConfig


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 64
    patch_size: int = 8
    # patch graph and classifier
    k: int = 8
    gcn_layers: int = 3
    blocks: int = 3
    heads: int = 4
    dim: int = 128
    mlp_dim: int = 256
    clusters: int = 16
    aux_weight: float = 1.0
    # encoder
    enc_dim: int = 64
    enc_heads: int = 4
    enc_depth: int = 4
    enc_mlp_dim: int = 128
    prototypes: int = 256
    # self-distillation
    mask_ratio: float = 0.4
    tau_s: float = 0.1
    tau_t: float = 0.04
    m_ema: float = 0.996
    rho: float = 0.9
    lr_base: float = 5e-4
    batch_size: int = 64
    lr_mult: float = 32.0
    pretrain_epochs: int = 20
    # classifier training
    cls_lr: float = 1e-3
    cls_batch_size: int = 32
    cls_epochs: int = 30
    # data
    n_train: int = 512
    n_test: int = 256
    test_seed_offset: int = 100000
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "outputs"

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def lr(self) -> float:
        """Effective pre-training lr: lr_base * batch / 256 * lr_mult."""
        return scaled_lr(self.batch_size, self.lr_base, self.lr_mult)

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            want = {"int": int, "float": (int, float), "str": str}[f.type]
            if not isinstance(v, want) or isinstance(v, bool):
                raise ConfigError(f"{f.name} must be {f.type}, got {v!r}")
        positive = ("image_size", "patch_size", "k", "gcn_layers", "blocks", "heads", "dim",
                    "mlp_dim", "clusters", "enc_dim", "enc_heads", "enc_depth", "enc_mlp_dim",
                    "prototypes", "batch_size", "pretrain_epochs", "cls_batch_size", "cls_epochs",
                    "tau_s", "tau_t", "lr_base", "lr_mult", "cls_lr")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not a multiple of "
                              f"patch_size {self.patch_size}")
        n = self.grid ** 2
        if not 1 <= self.k <= n - 1:
            raise ConfigError(f"k must lie in [1, {n - 1}] for a {n}-patch grid, got {self.k}")
        if self.clusters > n:
            raise ConfigError(f"cannot pool {n} patches into {self.clusters} clusters")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        for name in ("m_ema", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.aux_weight < 0:
            raise ConfigError(f"aux_weight must be >= 0, got {self.aux_weight}")
        if self.n_train < 2 or self.n_test < 2:
            raise ConfigError("n_train and n_test must be >= 2")
        self.encoder_config()
        self.classifier_config()

    def encoder_config(self) -> ViTEncoderConfig:
        return ViTEncoderConfig(self.image_size, self.patch_size, 3, self.enc_dim, self.enc_heads,
                                self.enc_depth, self.enc_mlp_dim, self.enc_mlp_dim, self.prototypes)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(encoder=self.encoder_config(), batch_size=self.batch_size,
                              lr_base=self.lr_base, lr_mult=self.lr_mult,
                              mask_ratio=self.mask_ratio, tau_s=self.tau_s, tau_t=self.tau_t,
                              m_ema=self.m_ema, rho=self.rho)

    def classifier_config(self) -> GraphTransformerConfig:
        return GraphTransformerConfig(self.enc_dim, self.k, self.gcn_layers, self.blocks,
                                      self.heads, self.dim, self.mlp_dim, self.clusters,
                                      self.aux_weight)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.cls_epochs, self.cls_batch_size, self.cls_lr)

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        out[key.strip()] = _parse_value(raw)
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``key=value`` overrides; validated once at the end."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    values.update(parse_overrides(overrides or []))
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for f in fields(RunConfig):
        if f.type == "float" and isinstance(values.get(f.name), int) \
                and not isinstance(values[f.name], bool):
            values[f.name] = float(values[f.name])
    return RunConfig(**values)
