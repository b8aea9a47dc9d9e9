"""Pipeline configuration: one JSON document with a section per stage.

Unknown keys are rejected at every level so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .beamformer import BeamformerConfig
from .enhancer import EnhancerConfig
from .simulate import ARRAY_KINDS
from .trainer import TrainConfig


def _strict(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**d)


@dataclass
class SimulateConfig:
    n_mics: int = 8
    seconds: float = 4.0
    snr_min: float = 0.0
    snr_max: float = 15.0
    kinds: tuple[str, ...] = ARRAY_KINDS

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        bad = set(self.kinds) - set(ARRAY_KINDS)
        if bad:
            raise ValueError(f"unknown array kinds {sorted(bad)}")
        if self.snr_min > self.snr_max:
            raise ValueError("snr_min exceeds snr_max")


@dataclass
class EvaluateConfig:
    reference_channel: int = 0


@dataclass
class PipelineConfig:
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    beamformer: BeamformerConfig = field(default_factory=BeamformerConfig)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @classmethod
    def desk(cls) -> "PipelineConfig":
        return cls(
            simulate=SimulateConfig(n_mics=2, seconds=1.0),
            beamformer=BeamformerConfig.desk(),
            enhancer=EnhancerConfig.desk(),
            train=TrainConfig(learning_rate=1e-3, epochs=20),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        sections = {
            "simulate": SimulateConfig,
            "beamformer": BeamformerConfig,
            "enhancer": EnhancerConfig,
            "train": TrainConfig,
            "evaluate": EvaluateConfig,
        }
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        base = cls()
        kwargs = {}
        for name, klass in sections.items():
            merged = {**_section_dict(getattr(base, name)), **d.get(name, {})}
            kwargs[name] = _strict(klass, merged, name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {name: _section_dict(getattr(self, name)) for name in ("simulate", "beamformer", "enhancer", "train", "evaluate")}


def _section_dict(obj) -> dict:
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    d = asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path=None, preset: str = "full") -> PipelineConfig:
    """Read a JSON config; sections not given fall back to ``preset`` defaults."""
    base = PipelineConfig.desk() if preset == "desk" else PipelineConfig()
    if path is None:
        return base
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"simulate", "beamformer", "enhancer", "train", "evaluate"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    merged = {name: {**sec, **data.get(name, {})} for name, sec in base.to_dict().items()}
    return PipelineConfig.from_dict(merged)
