"""Experiment configuration: strict YAML sections, round-tripping, and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ParameterError

DEFAULT_EPSILON = 8.0 / 255.0


def _build(cls, data: dict, section: str):
    if data is None:
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ParameterError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**data)


@dataclass
class DataSection:
    count: int = 500
    size: int = 64
    channels: int = 3
    face_like: bool = True
    blur_sigma: float = 1.2
    downscale: float = 0.5
    noise_sigma: float = 0.03


@dataclass
class InjectorSection:
    base_width: int = 16
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 0.5
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 20
    trigger_corpus_size: int = 64


@dataclass
class VictimSection:
    base_width: int = 16
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 20
    clean_weight: float = 0.75
    poison_weight: float = 0.125
    legacy_clean_weight: float = 0.85
    mode: str = "robust"


@dataclass
class AttackSection:
    method: str = "learned"  # learned | fiba | wanet
    trigger_seed: int = 101
    pseudo_pool_size: int = 16
    fiba_blend: float = 0.1
    wanet_strength: float = 0.5
    wanet_grid_size: int = 4


@dataclass
class EvalSection:
    beta: float = 0.15


@dataclass
class DefenseSection:
    prune_ratios: list = field(
        default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    )
    strip_overlays: int = 10
    strip_blend: float = 0.5
    strip_bins: int = 256
    strip_count: int = 200


SECTION_TYPES = {
    "data": DataSection,
    "injector": InjectorSection,
    "victim": VictimSection,
    "attack": AttackSection,
    "eval": EvalSection,
    "defense": DefenseSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 7
    out_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    injector: InjectorSection = field(default_factory=InjectorSection)
    victim: VictimSection = field(default_factory=VictimSection)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)
    defense: DefenseSection = field(default_factory=DefenseSection)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        known = set(SECTION_TYPES) | {"seed", "out_dir"}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {}
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        if "out_dir" in data:
            kwargs["out_dir"] = str(data["out_dir"])
        for name, section_cls in SECTION_TYPES.items():
            if name in data:
                kwargs[name] = _build(section_cls, data[name], name)
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "out_dir": self.out_dir}
        for name in SECTION_TYPES:
            out[name] = dataclasses.asdict(getattr(self, name))
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
