"""Experiment configuration (YAML). See configs/example.yaml for an annotated copy."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .model import HHGNNConfig, Variant
from .synth import SyntheticSpec
from .training import OPTIMIZER_KEYS, TrainSettings

MODEL_KEYS = ("hidden_dim", "num_blocks", "dropout_rate", "leaky_slope")


@dataclass
class ExperimentConfig:
    out: str = "runs/default"
    data: Optional[str] = None  # defaults to <out>/synthetic.csv
    rules: Optional[str] = None  # defaults to phone-placement exclusivity
    seed: int = 0
    model_seed: Optional[int] = None  # defaults to seed
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    min_combo_frequency: int = 1
    variant: Variant = Variant.FULL
    model: dict = field(default_factory=lambda: {"hidden_dim": 64, "num_blocks": 2, "dropout_rate": 0.0, "leaky_slope": 0.01})
    optimizer: dict = field(default_factory=lambda: {"learning_rate": 1e-2, "weight_decay": 0.0, "batch_size": None})
    max_epochs: int = 200
    grid: dict = field(default_factory=dict)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.split = tuple(float(r) for r in self.split)
        unknown = set(self.model) - set(MODEL_KEYS)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        unknown = set(self.optimizer) - set(OPTIMIZER_KEYS) - {"batch_size"}
        if unknown:
            raise ValueError(f"unknown optimizer keys: {sorted(unknown)}")
        for k, values in self.grid.items():
            if k not in MODEL_KEYS + OPTIMIZER_KEYS:
                raise ValueError(f"grid key {k!r} is not a tunable hyperparameter")
            if not isinstance(values, list) or not values:
                raise ValueError(f"grid entry {k!r} must be a nonempty list")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def data_path(self) -> Path:
        return Path(self.data) if self.data else self.out_dir / "synthetic.csv"

    @property
    def effective_model_seed(self) -> int:
        return self.seed if self.model_seed is None else self.model_seed

    def model_config(self, feature_dim: int) -> HHGNNConfig:
        return HHGNNConfig(feature_dim=feature_dim, **self.model)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(max_epochs=self.max_epochs, **self.optimizer)

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["variant"] = self.variant.value
        d["split"] = list(self.split)
        d["synthetic"] = asdict(self.synthetic)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        paths = d.pop("paths", {}) or {}
        for k in ("out", "data", "rules"):
            if k in paths:
                d[k] = paths[k]
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "synthetic" in d:
            d["synthetic"] = SyntheticSpec(**(d["synthetic"] or {}))
        for k in ("model", "optimizer"):
            if k in d:
                base = getattr(cls(), k)
                base.update(d[k] or {})
                d[k] = base
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))
