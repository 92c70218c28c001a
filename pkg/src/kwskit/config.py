"""Experiment configuration: one TOML file drives the whole pipeline."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import CorpusConfig, PhoneSet
from .features import FeatureConfig


@dataclass
class AugSpecConfig:
    """One named corruption condition: interference kind plus an SIR range."""

    name: str
    kind: str
    sir_db: tuple[float, float]
    split: str = "train"

    def __post_init__(self) -> None:
        if self.kind not in ("music", "movie"):
            raise ValueError(f"unknown interference kind {self.kind!r}")
        if self.sir_db[0] > self.sir_db[1]:
            raise ValueError(f"inverted SIR range {self.sir_db}")


@dataclass
class ModelSettings:
    hidden_layers: int = 3
    hidden_units: int = 128
    learning_rate: float = 0.08
    batch_size: int = 256
    epochs: int = 8
    loss_weight_keyword: float = 0.9
    loss_weight_aux: float = 0.1


@dataclass
class DecoderSettings:
    states_per_phone: int = 1
    self_loop_prob: float = 0.5
    entry_penalties: tuple[float, ...] = (0.0, 2.0, 4.0)
    threshold_min: float = -3.0
    threshold_max: float = 3.0
    threshold_count: int = 61


@dataclass
class InterferenceSettings:
    music_seconds: float = 180.0
    movie_seconds: float = 180.0
    clip_seconds: float = 10.0


@dataclass
class RirSettings:
    rt60_seconds: tuple[float, ...] = (0.15, 0.3, 0.5)


@dataclass
class EvalSettings:
    far_low: float = 0.01
    far_high: float = 0.5

    def __post_init__(self) -> None:
        if not (self.far_low < self.far_high):
            raise ValueError(f"invalid FAR range [{self.far_low}, {self.far_high}]")


@dataclass
class ExperimentConfig:
    seed: int = 20260809
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    decoder: DecoderSettings = field(default_factory=DecoderSettings)
    interference: InterferenceSettings = field(default_factory=InterferenceSettings)
    rirs: RirSettings = field(default_factory=RirSettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    train_specs: list[AugSpecConfig] = field(
        default_factory=lambda: [
            AugSpecConfig("music_0_40", "music", (0.0, 40.0)),
            AugSpecConfig("music_m20_40", "music", (-20.0, 40.0)),
            AugSpecConfig("movie_0_40", "movie", (0.0, 40.0)),
        ]
    )
    test_condition: AugSpecConfig = field(
        default_factory=lambda: AugSpecConfig("music_test", "music", (-10.0, 10.0), split="test")
    )

    def __post_init__(self) -> None:
        names = [s.name for s in self.train_specs] + [self.test_condition.name, "clean"]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate condition names: {names}")

    def spec_by_name(self, name: str) -> AugSpecConfig:
        for spec in self.train_specs:
            if spec.name == name:
                return spec
        if name == self.test_condition.name:
            return self.test_condition
        known = [s.name for s in self.train_specs] + [self.test_condition.name]
        raise KeyError(f"unknown augmentation spec {name!r}; known: {known}")

    @property
    def model_names(self) -> list[str]:
        return ["clean"] + [s.name for s in self.train_specs]

    @property
    def condition_names(self) -> list[str]:
        return ["clean", self.test_condition.name]


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _corpus_from_dict(raw: dict) -> CorpusConfig:
    kwargs: dict = {}
    if "keyword" in raw:
        kwargs["keyword"] = tuple(raw["keyword"])
    if "phones" in raw:
        phones = raw["phones"]
        kwargs["phone_set"] = PhoneSet(
            symbols=tuple(p["symbol"] for p in phones),
            formants_hz=tuple((float(p["f1"]), float(p["f2"])) for p in phones),
        )
    if "counts" in raw:
        kwargs["counts"] = {k: (int(v[0]), int(v[1])) for k, v in raw["counts"].items()}
    for key in ("phone_duration_ms", "silence_ms", "tone_amplitudes"):
        if key in raw:
            kwargs[key] = (float(raw[key][0]), float(raw[key][1]))
    if "filler_phones" in raw:
        kwargs["filler_phones"] = (int(raw["filler_phones"][0]), int(raw["filler_phones"][1]))
    if "noise_level" in raw:
        kwargs["noise_level"] = float(raw["noise_level"])
    return CorpusConfig(**kwargs)


def _spec_from_dict(raw: dict, default_split: str) -> AugSpecConfig:
    return AugSpecConfig(
        name=raw["name"],
        kind=raw["kind"],
        sir_db=(float(raw["sir_db"][0]), float(raw["sir_db"][1])),
        split=raw.get("split", default_split),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a TOML experiment config; missing sections fall back to defaults."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    kwargs: dict = {}
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    if "corpus" in raw:
        kwargs["corpus"] = _corpus_from_dict(raw["corpus"])
    for section, cls in (
        ("features", FeatureConfig),
        ("model", ModelSettings),
        ("decoder", DecoderSettings),
        ("interference", InterferenceSettings),
        ("evaluation", EvalSettings),
    ):
        if section in raw:
            data = dict(raw[section])
            if section == "decoder" and "entry_penalties" in data:
                data["entry_penalties"] = tuple(float(v) for v in data["entry_penalties"])
            kwargs[section if section != "evaluation" else "evaluation"] = cls(**data)
    if "rirs" in raw:
        kwargs["rirs"] = RirSettings(
            rt60_seconds=tuple(float(v) for v in raw["rirs"]["rt60_seconds"])
        )
    augment = raw.get("augment", {})
    if "train_specs" in augment:
        kwargs["train_specs"] = [
            _spec_from_dict(s, "train") for s in augment["train_specs"]
        ]
    if "test_condition" in augment:
        kwargs["test_condition"] = _spec_from_dict(augment["test_condition"], "test")
    return ExperimentConfig(**kwargs)
