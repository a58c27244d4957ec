from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import ConfigError


WEIGHT_MODES = ("mean", "adaptive")
MONITORS = ("loss", "val_accuracy")
CLASSIFIERS = ("gd", "sklearn")


@dataclass
class DataConfig:
    dataset: Optional[str] = None
    content_path: Optional[str] = None
    cites_path: Optional[str] = None
    split_path: Optional[str] = None
    cache_path: Optional[str] = None
    normalize_features: bool = True

    def validate(self) -> None:
        if self.cache_path is None and self.dataset is None and not (
            self.content_path and self.cites_path
        ):
            raise ConfigError("data: set dataset, cache_path, or content_path + cites_path")


@dataclass
class GmiConfig:
    weight_mode: str = "mean"
    negatives: int = 5
    alpha: float = 1.0
    beta: float = 1.0
    compressed_input: bool = True
    topology_negatives_per_edge: int = 1
    hidden_dim: int = 512
    depth: int = 2
    residual: bool = False
    dense_gmi: bool = False
    shared_discriminator: bool = False

    def validate(self) -> None:
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"gmi.weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.negatives < 1:
            raise ConfigError("gmi.negatives must be >= 1")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"gmi.{name} must lie in [0, 1], got {value}")
        if self.topology_negatives_per_edge < 0:
            raise ConfigError("gmi.topology_negatives_per_edge must be >= 0")
        if self.hidden_dim < 1 or self.depth < 1:
            raise ConfigError("gmi.hidden_dim and gmi.depth must be >= 1")


@dataclass
class SubsampleConfig:
    fanouts: Tuple[int, int] = (8, 5)
    batch_size: int = 256

    def validate(self) -> None:
        if len(self.fanouts) != 2 or min(self.fanouts) < 1:
            raise ConfigError("train.subsample.fanouts must be two counts >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.subsample.batch_size must be >= 1")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    max_epochs: int = 600
    early_stop_window: int = 20
    seed: int = 0
    fixed_epochs: Optional[int] = None
    subsample: Optional[SubsampleConfig] = None
    monitor: str = "loss"
    log_every: int = 50

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.early_stop_window < 1:
            raise ConfigError("train.early_stop_window must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("train.max_epochs must be >= 0")
        if self.fixed_epochs is not None and self.fixed_epochs < 0:
            raise ConfigError("train.fixed_epochs must be >= 0")
        if self.monitor not in MONITORS:
            raise ConfigError(f"train.monitor must be one of {MONITORS}")
        if self.subsample is not None:
            self.subsample.validate()


@dataclass
class EvalConfig:
    runs: int = 50
    link_runs: int = 10
    ratio: float = 0.2
    standardize: bool = False
    l2: float = 0.01
    iterations: int = 300
    learning_rate: float = 0.1
    classifier: str = "gd"

    def validate(self) -> None:
        if self.runs < 1 or self.link_runs < 1:
            raise ConfigError("eval.runs and eval.link_runs must be >= 1")
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError("eval.ratio must lie in [0, 1)")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"eval.classifier must be one of {CLASSIFIERS}")
        if self.iterations < 1 or self.learning_rate <= 0 or self.l2 < 0:
            raise ConfigError("eval.iterations, eval.learning_rate and eval.l2 out of range")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    gmi: GmiConfig = field(default_factory=GmiConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out: str = "runs/latest"

    @staticmethod
    def from_dict(raw: Dict[str, Any]) -> "RunConfig":
        raw = dict(raw or {})
        unknown = set(raw) - {"data", "gmi", "train", "eval", "seed", "out"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        train_raw = dict(raw.get("train") or {})
        subsample_raw = train_raw.pop("subsample", None)
        train = _build(TrainConfig, train_raw, "train")
        if subsample_raw:
            subsample = _build(SubsampleConfig, subsample_raw, "train.subsample")
            subsample.fanouts = tuple(int(f) for f in subsample.fanouts)  # type: ignore[assignment]
            train.subsample = subsample
        seed = int(raw.get("seed", train.seed))
        train.seed = seed
        return RunConfig(
            data=_build(DataConfig, raw.get("data") or {}, "data"),
            gmi=_build(GmiConfig, raw.get("gmi") or {}, "gmi"),
            train=train,
            eval=_build(EvalConfig, raw.get("eval") or {}, "eval"),
            seed=seed,
            out=str(raw.get("out", "runs/latest")),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        subsample = data["train"].get("subsample")
        if subsample is not None:
            subsample["fanouts"] = list(subsample["fanouts"])
        return data

    def with_overrides(self, overrides: Dict[str, Dict[str, Any]]) -> "RunConfig":
        """
        Return a copy with section-level overrides applied. The ``run``
        section holds top-level keys (seed, out); ``None`` values mean "not
        given" and are skipped.
        """
        merged = self.to_dict()
        for section, values in overrides.items():
            for key, value in values.items():
                if value is None:
                    continue
                if section == "run":
                    merged[key] = value
                else:
                    merged[section][key] = value
        return RunConfig.from_dict(merged)

    def validate(self) -> "RunConfig":
        self.gmi.validate()
        self.train.validate()
        self.eval.validate()
        return self

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")


def _build(cls, raw: Dict[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return replace(cls(), **raw)
    except TypeError as exc:
        raise ConfigError(f"invalid {section} section: {exc}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    if not path:
        return RunConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not data:
        return RunConfig()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)
