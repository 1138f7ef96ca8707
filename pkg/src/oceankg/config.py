"""Experiment configuration: defaults, validation and file loading."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .transe import TransEConfig

HORIZONS = (8, 16, 32)
VARIANTS = ("full", "no_ts_encoding", "no_kg_encoding", "no_alignment")
DEFAULT_BATCH = {8: 64, 16: 16, 32: 16}


@dataclass
class SyntheticConfig:
    """Parameters of the KG-correlated synthetic dataset used when no paths are given."""

    rows: int = 4
    cols: int = 5
    t_total: int = 300
    n_currents: int = 4
    noise: float = 0.3
    seasonal_amplitude: float = 2.0
    trend_scale: float = 0.15
    seed: int = 0


@dataclass
class ExperimentConfig:
    lookback: int = 8
    horizon: int = 8
    batch_size: int | None = None
    learning_rate: float = 1e-4
    lr_halving_epochs: int | None = 4
    max_epochs: int = 50
    patience: int | None = 5
    restore_best: bool = True
    seed: int = 0
    grad_clip: float | None = 1.0

    patch_len: int = 4
    stride: int = 2
    d: int = 64
    d_model: int = 64
    d_k: int = 64
    token_len: int = 64
    d_hidden: int | None = None
    k_hops: int = 1
    max_key_regions: int = 5
    align_residual: bool = True
    revin_eps: float = 1e-5
    revin_affine: bool = False

    variant: str = "full"
    backbone: str = "causal-transformer"
    backbone_hidden: int = 64
    backbone_layers: int = 4
    backbone_heads: int = 8
    backbone_seed: int = 0
    decoder_layers: int = 2
    decoder_heads: int = 8
    text_vocab: int = 4096
    text_seed: int = 0

    split: tuple = (0.7, 0.1, 0.2)
    min_coverage: float = 0.9
    sst_path: str | None = None
    kg_dir: str | None = None
    kge_path: str | None = None
    kge: TransEConfig = field(default_factory=lambda: TransEConfig(d=64, epochs=50))
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if isinstance(self.kge, dict):
            self.kge = _build(TransEConfig, self.kge, "kge")
        if isinstance(self.synthetic, dict):
            self.synthetic = _build(SyntheticConfig, self.synthetic, "synthetic")
        self.split = tuple(self.split)

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return DEFAULT_BATCH.get(self.horizon, 16)

    def validate(self) -> ExperimentConfig:
        if self.horizon not in HORIZONS:
            raise ConfigurationError(f"horizon must be one of {HORIZONS}, got {self.horizon}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.patch_len > self.lookback:
            raise ConfigurationError("patch_len must not exceed lookback")
        for name in ("lookback", "patch_len", "stride", "d", "d_model", "d_k", "token_len",
                     "backbone_hidden", "backbone_layers", "backbone_heads", "decoder_heads",
                     "max_key_regions", "effective_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.d_hidden is not None and self.d_hidden <= 0:
            raise ConfigurationError("d_hidden must be positive")
        if self.max_epochs < 0 or self.k_hops < 0 or self.decoder_layers < 0:
            raise ConfigurationError("max_epochs, k_hops and decoder_layers must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.backbone_hidden % self.decoder_heads:
            raise ConfigurationError("backbone_hidden must be divisible by decoder_heads")
        if self.kge.d != self.d:
            raise ConfigurationError(f"kge.d ({self.kge.d}) must equal d ({self.d})")
        self.kge.validate()
        return self

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split"] = list(self.split)
        return out

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown {where} config keys: {', '.join(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(data), "experiment").validate()


def load_config(path) -> ExperimentConfig:
    """Read a YAML or JSON config; unknown keys are rejected."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a mapping at top level")
    return config_from_dict(data)


def lr_schedule(base: float, epochs: int, halving_every: int | None = 4) -> list[float]:
    """Learning rate per epoch, halved every ``halving_every`` epochs."""
    if not halving_every:
        return [base] * epochs
    return [base * 0.5 ** (e // halving_every) for e in range(epochs)]
