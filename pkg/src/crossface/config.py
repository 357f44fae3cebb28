"""Experiment configuration: the pipeline 5-tuple and the JSON config file."""

import hashlib
import json
from dataclasses import dataclass, field, replace

from .classify import CLASSIFIER_KINDS
from .dataset import DomainShiftParams
from .embedding import BUILTIN_LAYERS, EXTERNAL_LAYERS, LAYER_TABLE
from .imaging import ENHANCEMENT_DEFAULTS

STAGES = ("enhancement", "layer", "normalization", "combination", "classifier")

NORM_TAGS = ("none", "l1", "l2", "z")
COMBINE_TAGS = ("abssub", "mult", "crosscorr", "phasecorr")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    enhancement: str
    layer: str
    normalization: str
    combination: str
    classifier: str

    def __post_init__(self):
        checks = [
            ("enhancement", self.enhancement, tuple(ENHANCEMENT_DEFAULTS)),
            ("layer", self.layer, tuple(LAYER_TABLE)),
            ("normalization", self.normalization, NORM_TAGS),
            ("combination", self.combination, COMBINE_TAGS),
            ("classifier", self.classifier, CLASSIFIER_KINDS),
        ]
        for name, value, valid in checks:
            if value not in valid:
                raise ConfigError(f"invalid {name} {value!r}; valid: {', '.join(valid)}")

    def with_stage(self, stage, tag):
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        return replace(self, **{stage: tag})

    def stage_tag(self, stage):
        return getattr(self, stage)

    def to_dict(self):
        return {s: getattr(self, s) for s in STAGES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{s: d[s] for s in STAGES})

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


DEFAULT_BASELINE = PipelineConfig("none", "fc7", "none", "abssub", "linear_svm")


def default_menus(layers):
    return {
        "enhancement": ["none", "retinex", "ace", "clahe"],
        "layer": list(layers),
        "normalization": ["none", "l1", "l2", "z"],
        "combination": ["abssub", "mult", "crosscorr", "phasecorr"],
        "classifier": ["linear_svm", "rbf_svm", "logreg"],
    }


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    builtin_embedders: tuple = ("lbp",)
    external_embeddings: dict = field(default_factory=dict)   # file tag -> path
    baseline: PipelineConfig = None
    menus: dict = None
    grid: str = "coarse"
    master_seed: int = 42
    n_splits: int = 100
    jobs: int = 1
    out_dir: str = "out"
    retain_scores: bool = True
    enhancement_params: dict = field(default_factory=dict)
    phase_conjugate: bool = False
    dump_enhanced: bool = False

    @property
    def grid_stride(self):
        return 5 if self.grid == "coarse" else 1

    def available_layers(self):
        layers = list(self.builtin_embedders)
        for tag in EXTERNAL_LAYERS:
            _, file_tag, _ = LAYER_TABLE[tag]
            if file_tag in self.external_embeddings:
                layers.append(tag)
        return layers

    def validate(self):
        if self.grid not in ("coarse", "full"):
            raise ConfigError(f"grid must be coarse|full, got {self.grid!r}")
        if self.n_splits < 1:
            raise ConfigError("n_splits must be >= 1")
        avail = set(self.available_layers())
        for cfg_layer in [self.baseline.layer] + list(self.menus["layer"]):
            if cfg_layer not in avail:
                raise ConfigError(
                    f"layer {cfg_layer!r} not available: external layers need an "
                    f"EMB1 path, builtins must be listed (have: {sorted(avail)})")
        for stage in STAGES:
            if stage not in self.menus or not self.menus[stage]:
                raise ConfigError(f"menu for stage {stage!r} is missing or empty")
        kind = self.dataset.get("kind")
        if kind not in ("synthetic", "manifest"):
            raise ConfigError(f"dataset.kind must be synthetic|manifest, got {kind!r}")
        return self


def load_experiment_config(path, overrides=None) -> ExperimentConfig:
    """Parse the UTF-8 JSON experiment config file."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val
    emb = raw.get("embeddings", {})
    builtins = tuple(emb.get("builtin", ["lbp"]))
    external = dict(emb.get("external", {}))
    layers = builtins + tuple(t for t in EXTERNAL_LAYERS
                              if LAYER_TABLE[t][1] in external)
    if "baseline" in raw:
        baseline = PipelineConfig.from_dict(raw["baseline"])
    elif set(EXTERNAL_LAYERS) & set(layers):
        baseline = DEFAULT_BASELINE
    else:
        baseline = replace(DEFAULT_BASELINE, layer=layers[0])
    menus = dict(default_menus(layers))
    menus.update(raw.get("menus", {}))
    cfg = ExperimentConfig(
        dataset=raw["dataset"],
        builtin_embedders=builtins,
        external_embeddings=external,
        baseline=baseline,
        menus=menus,
        grid=raw.get("grid", "coarse"),
        master_seed=int(raw.get("master_seed", 42)),
        n_splits=int(raw.get("n_splits", 100)),
        jobs=int(raw.get("jobs", 1)),
        out_dir=raw.get("out_dir", "out"),
        retain_scores=bool(raw.get("retain_scores", True)),
        enhancement_params=dict(raw.get("enhancement_params", {})),
        phase_conjugate=bool(raw.get("phase_conjugate", False)),
        dump_enhanced=bool(raw.get("dump_enhanced", False)),
    )
    return cfg.validate()


def shift_params_of(dataset_cfg) -> DomainShiftParams:
    return DomainShiftParams.from_dict(dataset_cfg.get("shift", "default"))
