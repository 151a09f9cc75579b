"""Declarative experiment configuration (JSON, schema-versioned)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .errors import ConfigurationError
from .model import ModelSpec, TrainConfig

SCHEMA_VERSION = 1
METHODS = ("mr_qi", "1r_qi", "mr_fedgt", "1r_fedgt", "cos", "loo")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    classes: int = 10
    dim: int = 20
    samples: int = 12000
    sep: float = 3.0
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigurationError("csv dataset needs a path")


@dataclass(frozen=True)
class FedGTConfig:
    groups: int = 6
    group_size: int = 5
    epsilon: float = 0.02
    crossover_p: float = 0.15
    prior_delta: Optional[float] = None
    strategy: str = "prefixed"


@dataclass(frozen=True)
class QIConfig:
    tie_tol: float = 1e-4
    ugly: bool = True


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3
    model: str = "logistic"
    hidden: tuple = ()

    def to_train_config(self):
        return TrainConfig(
            local_epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            model=ModelSpec(self.model, tuple(self.hidden)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data, federation, attack/noise, methods and seeds.

    Client indices are 0-based. ``attackers`` is either a count (drawn from
    the data seed) or an explicit list. ``test_rounds`` defaults to every
    round except the first. Data, splits, attackers and noise are shared by
    all repetitions unless ``vary_data`` is set, in which case each
    repetition draws its own.
    """

    experiment_id: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    val_fraction: float = 0.1
    partition: str = "iid"
    alpha: float = 0.5
    num_clients: int = 15
    rounds: int = 20
    attackers: object = 0
    noise: bool = False
    methods: tuple = METHODS
    fedgt: FedGTConfig = field(default_factory=FedGTConfig)
    qi: QIConfig = field(default_factory=QIConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    test_rounds: Optional[tuple] = None
    repetitions: int = 1
    seed: int = 0
    vary_data: bool = False
    mode: str = "silo"
    participants: Optional[int] = None
    structured_selection: bool = False
    pipeline: str = "plain"
    md_round: Optional[int] = None
    md_method: str = "mr_qi"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported config schema version {self.schema_version}")
        if self.num_clients < 2:
            raise ConfigurationError("need at least two clients")
        if self.rounds < 1:
            raise ConfigurationError("need at least one round")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.partition not in ("iid", "dirichlet"):
            raise ConfigurationError(f"unknown partition {self.partition!r}")
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown methods {sorted(unknown)}")
        if isinstance(self.attackers, (list, tuple)):
            att = tuple(sorted({int(a) for a in self.attackers}))
            if any(not 0 <= a < self.num_clients for a in att):
                raise ConfigurationError("attacker indices must lie in 0..num_clients-1")
            object.__setattr__(self, "attackers", att)
        elif not 0 <= int(self.attackers) < self.num_clients:
            raise ConfigurationError("attacker count must be below num_clients")
        if self.test_rounds is not None:
            tr = tuple(sorted({int(t) for t in self.test_rounds}))
            if any(not 2 <= t <= self.rounds for t in tr):
                raise ConfigurationError("test rounds must lie in 2..rounds (testing starts at round 2)")
            object.__setattr__(self, "test_rounds", tr)
        if self.mode not in ("silo", "device"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "device":
            if self.participants is None or not 1 <= self.participants <= self.num_clients:
                raise ConfigurationError("device mode needs participants in 1..num_clients")
            if {"mr_fedgt", "1r_fedgt"} & set(self.methods) and self.pipeline == "plain":
                raise ConfigurationError("FedGT scoring is only supported in silo mode")
        if self.pipeline not in ("plain", "comprehensive"):
            raise ConfigurationError(f"unknown pipeline {self.pipeline!r}")
        if self.pipeline == "comprehensive":
            if self.md_round is None or not 2 <= self.md_round < self.rounds:
                raise ConfigurationError("md_round must satisfy 2 <= md_round < rounds")
            if self.md_method not in ("mr_qi", "1r_qi", "mr_fedgt", "1r_fedgt", "cos"):
                raise ConfigurationError(f"unsupported md_method {self.md_method!r}")

    @property
    def effective_test_rounds(self):
        if self.test_rounds is not None:
            return self.test_rounds
        return tuple(range(2, self.rounds + 1))

    @property
    def combined(self):
        """Attack and noise together: not one of the reference experiment types."""
        return bool(self.noise and self.attackers)

    def to_dict(self):
        d = asdict(self)
        for key in ("methods", "test_rounds"):
            if d[key] is not None:
                d[key] = list(d[key])
        if isinstance(d["attackers"], tuple):
            d["attackers"] = list(d["attackers"])
        d["train"]["hidden"] = list(d["train"]["hidden"])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        sub = {"dataset": DatasetConfig, "fedgt": FedGTConfig, "qi": QIConfig, "train": TrainingConfig}
        for key, kls in sub.items():
            if key in d and isinstance(d[key], dict):
                inner_known = {f.name for f in fields(kls)}
                bad = set(d[key]) - inner_known
                if bad:
                    raise ConfigurationError(f"unknown keys in {key!r}: {sorted(bad)}")
                inner = dict(d[key])
                if key == "train" and "hidden" in inner:
                    inner["hidden"] = tuple(inner["hidden"])
                d[key] = kls(**inner)
        if isinstance(d.get("attackers"), list):
            d["attackers"] = tuple(d["attackers"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def load_config(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)
