"""Run configuration: a JSON document with one section per subsystem.

Sections are {data, model, dro, gea, train, eval}; every field mirrors the
corresponding typed config and unknown keys anywhere are rejected before
any work starts.  Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from drgcf.dro import DroConfig
from drgcf.gea import GeaConfig
from drgcf.trainer import TrainConfig


class ConfigError(ValueError):
    """Unknown keys or invalid values in a run configuration."""


@dataclass
class DataSection:
    input: str | None = None
    mode: str | None = None
    quota: int = 3
    seed: int = 0
    min_count: int = 0
    train_file: str | None = None
    test_file: str | None = None
    name: str = "split"


@dataclass
class ModelSection:
    dim: int = 32
    num_layers: int = 3
    layer_combine: str = "mean"


@dataclass
class TrainSection:
    learning_rate: float = 0.01
    l2_lambda: float = 1e-4
    epochs: int = 100
    batch_size: int = 1024
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 20
    eval_every: int = 1


@dataclass
class DroSection:
    alpha: float = math.inf
    refresh_period: int = 1
    l2_normalize: bool = True


@dataclass
class GeaSection:
    enabled: bool = False
    gamma: float = 0.3
    candidate_size: int = 32
    refresh_period: int | None = None


@dataclass
class EvalSection:
    k: int = 20


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    dro: DroSection = field(default_factory=DroSection)
    gea: GeaSection = field(default_factory=GeaSection)
    eval: EvalSection = field(default_factory=EvalSection)

    _SECTIONS = {
        "data": DataSection,
        "model": ModelSection,
        "train": TrainSection,
        "dro": DroSection,
        "gea": GeaSection,
        "eval": EvalSection,
    }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(cls._SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in cls._SECTIONS.items():
            body = doc.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be an object")
            fields = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(body) - fields
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            if name == "dro" and "alpha" in body:
                body = {**body, "alpha": parse_alpha(body["alpha"])}
            kwargs[name] = section_cls(**body)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        # JSON has no infinity literal; spell it the way the CLI accepts it.
        if math.isinf(doc["dro"]["alpha"]):
            doc["dro"]["alpha"] = "inf"
        return doc

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    # -- typed views -------------------------------------------------------

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.train.learning_rate,
            l2_lambda=self.train.l2_lambda,
            epochs=self.train.epochs,
            batch_size=self.train.batch_size,
            num_layers=self.model.num_layers,
            dim=self.model.dim,
            seed=self.train.seed,
            optimizer=self.train.optimizer,
            adam_beta1=self.train.adam_beta1,
            adam_beta2=self.train.adam_beta2,
            adam_eps=self.train.adam_eps,
            layer_combine=self.model.layer_combine,
            patience=self.train.patience,
            eval_every=self.train.eval_every,
            eval_k=self.eval.k,
        )

    def dro_config(self) -> DroConfig | None:
        if math.isinf(self.dro.alpha):
            return None
        return DroConfig(
            alpha=self.dro.alpha,
            refresh_period=self.dro.refresh_period,
            l2_normalize=self.dro.l2_normalize,
        )

    def gea_config(self) -> GeaConfig | None:
        if not self.gea.enabled:
            return None
        return GeaConfig(
            gamma=self.gea.gamma,
            candidate_size=self.gea.candidate_size,
            refresh_period=self.gea.refresh_period,
            enabled=True,
        )


def parse_alpha(value) -> float:
    """Accept numbers or the documented "inf" spelling for disabling DRO."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad alpha value {value!r}") from exc
    value = float(value)
    if not value > 0:
        raise ConfigError(f"alpha must be > 0, got {value}")
    return value
