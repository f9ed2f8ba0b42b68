"""Pipeline configuration: one JSON document covering every stage."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .deconv import DeconvConfig
from .flowsim import SimConfig
from .imgcore import FlowDomain
from .net.model import TrainConfig

SCHEMA_VERSION = 1
ARCH_PRESETS = ("paper", "toy")


class ConfigError(ValueError):
    pass


def _from_fields(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc


@dataclass
class DatasetOptions:
    count_per_image: int = 3
    stride: int = 16
    include_sharp: bool = True

    def __post_init__(self):
        if self.count_per_image < 0 or self.stride < 1:
            raise ValueError("count_per_image must be >= 0 and stride >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    u_max: int = 8
    v_max: int = 8
    noise_sigma: float = 0.005
    arch: str = "toy"
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    deconv: DeconvConfig = field(default_factory=DeconvConfig)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCH_PRESETS:
            raise ConfigError(f"arch must be one of {ARCH_PRESETS}")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be >= 0")
        try:
            FlowDomain(self.u_max, self.v_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def dom(self) -> FlowDomain:
        return FlowDomain(self.u_max, self.v_max)

    def to_dict(self) -> dict:
        sim = self.sim.to_dict()
        sim.pop("seed")
        train = dataclasses.asdict(self.train)
        train.pop("seed")
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "domain": {"u_max": self.u_max, "v_max": self.v_max},
            "noise": {"sigma": self.noise_sigma},
            "arch": self.arch,
            "sim": sim,
            "train": train,
            "deconv": dataclasses.asdict(self.deconv),
            "dataset": dataclasses.asdict(self.dataset),
            "paths": dict(self.paths),
        }

    def dumps(self) -> str:
        """Canonical JSON form."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        allowed = {"schema_version", "seed", "domain", "noise", "arch", "sim", "train", "deconv", "dataset", "paths"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        seed = int(d.get("seed", 0))
        dom = d.get("domain", {})
        if set(dom) - {"u_max", "v_max"}:
            raise ConfigError(f"unknown keys in domain: {sorted(set(dom) - {'u_max', 'v_max'})}")
        noise = d.get("noise", {})
        if set(noise) - {"sigma"}:
            raise ConfigError("noise accepts only 'sigma'")
        sim = dict(d.get("sim", {}))
        train = dict(d.get("train", {}))
        for section, body in (("sim", sim), ("train", train)):
            if "seed" in body:
                raise ConfigError(f"{section}.seed is not allowed; use the global seed")
        sim["seed"] = seed
        train["seed"] = seed
        sim = {k: (tuple(v) if isinstance(v, list) else v) for k, v in sim.items()}
        paths = d.get("paths", {})
        if not isinstance(paths, dict) or not all(isinstance(v, str) for v in paths.values()):
            raise ConfigError("paths must map names to strings")
        return cls(
            seed=seed,
            u_max=dom.get("u_max", 8),
            v_max=dom.get("v_max", 8),
            noise_sigma=noise.get("sigma", 0.005),
            arch=d.get("arch", "toy"),
            sim=_from_fields(SimConfig, sim, "sim"),
            train=_from_fields(TrainConfig, train, "train"),
            deconv=_from_fields(DeconvConfig, d.get("deconv", {}), "deconv"),
            dataset=_from_fields(DatasetOptions, d.get("dataset", {}), "dataset"),
            paths=dict(paths),
        )

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text())

    def with_seed(self, seed: int) -> "PipelineConfig":
        d = self.to_dict()
        d["seed"] = seed
        return PipelineConfig.from_dict(d)
