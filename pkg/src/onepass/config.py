"""JSON experiment configuration.

A config file is one JSON object with optional sections; anything omitted
takes the default shown by ``ExperimentConfig().to_dict()``::

    {
      "dataset": {"source": "synthetic-blobs", "n_examples": 50000, ...},
      "learner": {"learner": "linear", "lr0": 0.1, "batch_size": 64, ...},
      "harness": {"replay_steps": 5, "storage_fraction": 0.01, ...},
      "sweep": {"replay_steps": [1, 3, 5, 8], "storage_fractions": [0.01, 0.05, 0.1],
                "multi_epoch": true},
      "seed": 0,
      "n_seeds": 1,
      "output_dir": "runs"
    }

Validation errors are raised as :class:`ConfigError` carrying the dotted
path of the offending field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from onepass.harness import HarnessConfig, LearnerConfig
from onepass.stream import Blobs, Dataset, DatasetSpec, generate_blobs, read_dataset


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str) -> None:
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic-blobs"
    n_examples: int = 50_000
    feature_dim: int = 20
    n_classes: int = 10
    seed: int = 0
    spread: float = 0.015
    center_scale: float = 0.01
    test_fraction: float = 0.1
    train_path: str | None = None
    test_path: str | None = None

    def spec(self) -> DatasetSpec:
        return DatasetSpec(
            n_examples=self.n_examples,
            feature_dim=self.feature_dim,
            n_classes=self.n_classes,
            source=self.source,
            seed=self.seed,
            spread=self.spread,
            center_scale=self.center_scale,
            test_fraction=self.test_fraction,
        )

    def load(self) -> tuple[Dataset, Dataset]:
        if self.source == "file":
            return read_dataset(self.train_path), read_dataset(self.test_path)
        blobs: Blobs = generate_blobs(self.spec())
        return blobs.train, blobs.test


@dataclass(frozen=True)
class SweepConfig:
    replay_steps: tuple[int, ...] = (1, 3, 5, 8)
    storage_fractions: tuple[float, ...] = (0.01, 0.05, 0.1)
    multi_epoch: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    learner: LearnerConfig = field(default_factory=lambda: LearnerConfig(batch_size=64))
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    n_seeds: int = 1
    output_dir: str = "runs"

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_seeds)]

    def with_harness(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, harness=dataclasses.replace(self.harness, **changes))


_SECTIONS = {
    "dataset": DatasetConfig,
    "learner": LearnerConfig,
    "harness": HarnessConfig,
    "sweep": SweepConfig,
}
_TOP_LEVEL = {"seed": int, "n_seeds": int, "output_dir": str}


def _coerce(path: str, value: Any, annotation: str) -> Any:
    """Check a JSON value against the (string) annotation of a dataclass field."""
    ann = annotation.replace(" ", "")
    if ann.startswith("tuple["):
        inner = ann[len("tuple[") : ann.index(",")]
        if not isinstance(value, list) or not value:
            raise ConfigError(path, "expected a non-empty list")
        return tuple(_coerce(f"{path}[{i}]", v, inner) for i, v in enumerate(value))
    if ann == "str|None":
        if value is None:
            return None
        ann = "str"
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {annotation}")


def _build_section(name: str, cls, raw: Any, defaults):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{name}.{key}", "unknown field")
        kwargs[key] = _coerce(f"{name}.{key}", value, str(fields[key].type))
    try:
        return dataclasses.replace(defaults, **kwargs)
    except ValueError as exc:
        bad = _guess_field(str(exc), kwargs) or next(iter(kwargs), "")
        raise ConfigError(f"{name}.{bad}" if bad else name, str(exc)) from None


def _guess_field(message: str, kwargs: dict) -> str | None:
    for key in kwargs:
        if message.startswith(key) or f" {key} " in f" {message} ":
            return key
    return None


def parse_config(doc: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    base = ExperimentConfig()
    changes: dict[str, Any] = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            changes[key] = _build_section(key, _SECTIONS[key], value, getattr(base, key))
        elif key in _TOP_LEVEL:
            changes[key] = _coerce(key, value, _TOP_LEVEL[key].__name__)
        else:
            raise ConfigError(key, "unknown field")
    config = dataclasses.replace(base, **changes)
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    if config.n_seeds < 1:
        raise ConfigError("n_seeds", "must be >= 1")
    if config.seed < 0:
        raise ConfigError("seed", "must be >= 0")
    ds = config.dataset
    if ds.source not in ("synthetic-blobs", "file"):
        raise ConfigError("dataset.source", "must be 'synthetic-blobs' or 'file'")
    if ds.source == "file":
        for name in ("train_path", "test_path"):
            if not getattr(ds, name):
                raise ConfigError(f"dataset.{name}", "required when source is 'file'")
    else:
        try:
            ds.spec()
        except ValueError as exc:
            raise ConfigError("dataset", str(exc)) from None
    for i, k in enumerate(config.sweep.replay_steps):
        if k < 0:
            raise ConfigError(f"sweep.replay_steps[{i}]", "must be >= 0")
    for i, f in enumerate(config.sweep.storage_fractions):
        if not 0 < f <= 1:
            raise ConfigError(f"sweep.storage_fractions[{i}]", "must lie in (0, 1]")
    if config.harness.replay_steps > 0 and config.harness.storage_fraction <= 0:
        raise ConfigError("harness.storage_fraction", "must be > 0 when replay_steps > 0")


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    for dotted, value in (overrides or {}).items():
        node = doc
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return parse_config(doc)
