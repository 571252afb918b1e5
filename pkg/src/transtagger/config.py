"""Run configuration, read from and written to a single JSON document.

A bare ``{}`` config reproduces the published training settings at desk
scale: Adam with lr 3e-4, batch 128, 4 epochs, block threshold 0.01, MTL
loss weights (0.1, 0.1, 1).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .fusion import FeatureSchema, FusionConfig
from .textenc import EncoderConfig

VARIANTS = ("trans", "hier", "mtl")


def _from_dict(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    variant: str = "trans"
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    lr: float = 3e-4
    batch_size: int = 128
    epochs: int = 4
    theta: float = 0.01
    hier_levels: list[str] = field(default_factory=lambda: ["theme", "poi"])
    mtl_weights: list[float] = field(default_factory=lambda: [0.1, 0.1, 1.0])
    mtl_lambda: float = 0.1
    vocab_size: int = 5000
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 7
    # paths
    data: str | None = None
    pois: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr and batch_size must be positive, epochs non-negative")
        if len(self.mtl_weights) != 3:
            raise ValueError("mtl_weights needs three entries (theme, subtheme, poi)")
        self.schema.validate()
        self.encoder.validate()
        self.fusion.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {
            "schema": FeatureSchema,
            "encoder": EncoderConfig,
            "fusion": FusionConfig,
        }
        for key, sub in nested.items():
            if key in d:
                d[key] = _from_dict(sub, d[key], key)
        cfg = _from_dict(cls, d, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        cfg = cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        base = Path(path).parent
        for key in ("data", "pois", "out"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
