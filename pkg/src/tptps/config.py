"""Run configuration: four blocks (corpus, encoder, loss, train) in one JSON file.

Environment variables named by upper-cased dotted keys override file values,
e.g. ``TRAIN.EPOCHS=5``. Since most shells reject dots in names, the form
``TPTPS_TRAIN__EPOCHS=5`` is accepted too.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .corpus import CorpusConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .losses import LossParams


@dataclass
class TrainConfig:
    epochs: int = 30
    warmup_epochs: int = 5
    base_lr: float = 6e-4
    weight_decay: float = 0.1
    batch_size: int = 16
    k_m: int = 3
    k_p: int = 3
    seed: int = 0
    corpus_seed: int = 7
    dtype: str = "float64"
    mid_mode: str = "adjective_and_phrase"
    sampler: str = "shuffle"  # or "pk": identity-balanced pairs
    renoise: bool = True
    held_out_images: int = 1
    reference_loss: bool = False
    checkpoint_every: int = 1

    def validate(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("need 0 <= warmup_epochs < epochs")
        if self.k_m < 0 or self.k_p < 0:
            raise ConfigError("k_m and k_p must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.sampler not in ("shuffle", "pk"):
            raise ConfigError("sampler must be 'shuffle' or 'pk'")
        if self.reference_loss and (self.k_m or self.k_p):
            raise ConfigError("reference_loss requires k_m = k_p = 0")


# schedule for fine-tuning pretrained encoders rather than training from scratch
FINETUNE_TRAIN = dict(epochs=60, warmup_epochs=5, base_lr=1e-5, weight_decay=0.1, k_m=3, k_p=3)

BLOCKS = {"corpus": CorpusConfig, "encoder": EncoderConfig, "loss": LossParams, "train": TrainConfig}


@dataclass
class Config:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossParams = field(default_factory=LossParams)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.corpus.validate()
        self.encoder.validate()
        self.loss.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        unknown = set(data) - set(BLOCKS)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        blocks = {}
        for name, klass in BLOCKS.items():
            values = dict(data.get(name, {}))
            known = {f.name for f in fields(klass)}
            bad = set(values) - known
            if bad:
                raise ConfigError(f"unknown keys in block {name!r}: {sorted(bad)}")
            blocks[name] = klass(**values)
        return cls(**blocks)

    @classmethod
    def load(cls, path: str | Path | None = None, env=None) -> "Config":
        data = json.loads(Path(path).read_text()) if path else {}
        cfg = cls.from_dict(data)
        apply_env_overrides(cfg, os.environ if env is None else env)
        return cfg.validate()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None and raw.lower() in ("", "none", "null"):
        return None
    return raw


def apply_env_overrides(cfg: Config, env) -> list[str]:
    applied = []
    for name in BLOCKS:
        block = getattr(cfg, name)
        for f in fields(block):
            for var in (f"{name}.{f.name}".upper(), f"TPTPS_{name}__{f.name}".upper()):
                if var in env:
                    setattr(block, f.name, _coerce(env[var], getattr(block, f.name)))
                    applied.append(var)
    return applied
