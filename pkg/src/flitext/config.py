"""Run configuration: one nested JSON file drives every command.

Schema (all keys optional, defaults shown by `default_config_dict()`):

{
  "seed": 0,
  "data": {
    "synthetic": { ... SyntheticSpec fields ... },        # or file paths:
    "train": "train.jsonl", "dev": "dev.jsonl", "test": "test.jsonl",
    "unlabeled": "unlabeled.jsonl",
    "embeddings": "vectors.txt",                          # optional, target emb init
    "max_vocab": null
  },
  "inspirer": {"layers", "d", "heads", "ff_dim", "max_len", "mlp_hidden",
                "projection_dim", "dropout"},
  "target":   {"filter_sizes", "channels", "emb_dim", "projection_dim",
                "projection_activation", "dropout"},
  "augment":  {"kind", "rate"},
  "train": {"epochs", "labeled_batch", "unsup_ratio", "inspirer_encoder_lr",
            "inspirer_head_lr", "target_lr", "tsa", "distill_mode",
            "toggles": {"output_distill", "feature_distill", "consistency"},
            "alignment"}
}

vocab_size and classes are filled in from the dataset at run time.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .augment import AugmentPolicy
from .data import SyntheticSpec
from .errors import ConfigError
from .losses import ComponentToggles
from .models import InspirerConfig, TargetConfig

_INSPIRER_KEYS = ("layers", "d", "heads", "ff_dim", "max_len", "mlp_hidden",
                  "projection_dim", "dropout")
_TARGET_KEYS = ("filter_sizes", "channels", "emb_dim", "projection_dim",
                "projection_activation", "dropout")


@dataclass
class TrainSection:
    epochs: int = 10
    labeled_batch: int = 4
    unsup_ratio: int = 3
    inspirer_encoder_lr: float = 1e-3
    inspirer_head_lr: float = 1e-3
    target_lr: float = 2e-3
    tsa: str = "linear"
    distill_mode: str = "soft"
    toggles: ComponentToggles = field(default_factory=ComponentToggles)
    alignment: str = "auto"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.unsup_ratio < 1:
            raise ConfigError(f"unsup_ratio must be >= 1, got {self.unsup_ratio}")
        for name in ("inspirer_encoder_lr", "inspirer_head_lr", "target_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class DataSection:
    synthetic: SyntheticSpec | None = None
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    unlabeled: str | None = None
    embeddings: str | None = None
    max_vocab: int | None = None

    def __post_init__(self):
        if self.synthetic is None and not (self.train and self.dev and self.test):
            raise ConfigError("data section needs either a synthetic spec or train/dev/test paths")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = None
    inspirer: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    train: TrainSection = field(default_factory=TrainSection)

    def inspirer_config(self, vocab_size, classes) -> InspirerConfig:
        return InspirerConfig(vocab_size=vocab_size, classes=classes, **self.inspirer)

    def target_config(self, vocab_size, classes) -> TargetConfig:
        return TargetConfig(vocab_size=vocab_size, classes=classes, **self.target)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "data": {},
            "inspirer": dict(self.inspirer),
            "target": dict(self.target),
            "augment": {"kind": self.augment.kind, "rate": self.augment.rate},
            "train": {
                "epochs": self.train.epochs,
                "labeled_batch": self.train.labeled_batch,
                "unsup_ratio": self.train.unsup_ratio,
                "inspirer_encoder_lr": self.train.inspirer_encoder_lr,
                "inspirer_head_lr": self.train.inspirer_head_lr,
                "target_lr": self.train.target_lr,
                "tsa": self.train.tsa,
                "distill_mode": self.train.distill_mode,
                "toggles": {name: getattr(self.train.toggles, name)
                            for name in ("output_distill", "feature_distill", "consistency")},
                "alignment": self.train.alignment,
            },
        }
        if self.data.synthetic is not None:
            spec = self.data.synthetic
            d["data"]["synthetic"] = {
                "classes": spec.classes, "vocab_size": spec.vocab_size,
                "keywords_per_class": spec.keywords_per_class,
                "seq_len": list(spec.seq_len), "injection_rate": spec.injection_rate,
                "label_noise": spec.label_noise, "n_labeled": spec.n_labeled,
                "n_unlabeled": spec.n_unlabeled, "n_dev": spec.n_dev,
                "n_test": spec.n_test, "seed": spec.seed,
            }
        for key in ("train", "dev", "test", "unlabeled", "embeddings", "max_vocab"):
            val = getattr(self.data, key)
            if val is not None:
                d["data"][key] = val
        if "filter_sizes" in d["target"]:
            d["target"]["filter_sizes"] = list(d["target"]["filter_sizes"])
        return d


def _check_keys(section, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)} (valid: {sorted(allowed)})")


def config_from_dict(raw: dict) -> RunConfig:
    raw = copy.deepcopy(raw)
    _check_keys(raw, ("seed", "data", "inspirer", "target", "augment", "train"), "config")
    seed = int(raw.get("seed", 0))

    data_raw = raw.get("data", {})
    _check_keys(data_raw, ("synthetic", "train", "dev", "test", "unlabeled",
                           "embeddings", "max_vocab"), "data")
    synthetic = None
    if "synthetic" in data_raw:
        synth_raw = dict(data_raw["synthetic"])
        synth_raw.setdefault("seed", seed)
        if "seq_len" in synth_raw:
            synth_raw["seq_len"] = tuple(synth_raw["seq_len"])
        try:
            synthetic = SyntheticSpec(**synth_raw)
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from e
    data = DataSection(
        synthetic=synthetic,
        train=data_raw.get("train"), dev=data_raw.get("dev"),
        test=data_raw.get("test"), unlabeled=data_raw.get("unlabeled"),
        embeddings=data_raw.get("embeddings"), max_vocab=data_raw.get("max_vocab"),
    )

    inspirer = dict(raw.get("inspirer", {}))
    _check_keys(inspirer, _INSPIRER_KEYS, "inspirer")
    target = dict(raw.get("target", {}))
    _check_keys(target, _TARGET_KEYS, "target")
    if "filter_sizes" in target:
        target["filter_sizes"] = tuple(target["filter_sizes"])

    aug_raw = raw.get("augment", {})
    _check_keys(aug_raw, ("kind", "rate"), "augment")
    augment = AugmentPolicy(kind=aug_raw.get("kind", "token_dropout"),
                            rate=aug_raw.get("rate", 0.3), seed=seed)

    train_raw = dict(raw.get("train", {}))
    _check_keys(train_raw, ("epochs", "labeled_batch", "unsup_ratio", "inspirer_encoder_lr",
                            "inspirer_head_lr", "target_lr", "tsa", "distill_mode",
                            "toggles", "alignment"), "train")
    toggles_raw = train_raw.pop("toggles", {})
    _check_keys(toggles_raw, ("output_distill", "feature_distill", "consistency"), "toggles")
    train = TrainSection(toggles=ComponentToggles(**toggles_raw), **train_raw)

    return RunConfig(seed=seed, data=data, inspirer=inspirer, target=target,
                     augment=augment, train=train)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return config_from_dict(raw)


def reference_config_dict(seed=0) -> dict:
    """The reference synthetic setup: 2 classes, 20 labeled, 2000 unlabeled,
    10% label noise; desk-scale models."""
    return {
        "seed": seed,
        "data": {
            "synthetic": {
                "classes": 2, "vocab_size": 120, "keywords_per_class": 6,
                "seq_len": [8, 16], "injection_rate": 0.25, "label_noise": 0.1,
                "n_labeled": 20, "n_unlabeled": 2000, "n_dev": 200, "n_test": 400,
            }
        },
        "inspirer": {"layers": 2, "d": 32, "heads": 2, "ff_dim": 64, "max_len": 20,
                     "mlp_hidden": 32, "projection_dim": 24, "dropout": 0.1},
        "target": {"filter_sizes": [2, 3, 5], "channels": 12, "emb_dim": 32,
                   "projection_dim": 24, "projection_activation": "relu", "dropout": 0.3},
        "augment": {"kind": "token_dropout", "rate": 0.3},
        "train": {"epochs": 10, "labeled_batch": 4, "unsup_ratio": 3,
                  "inspirer_encoder_lr": 1e-3, "inspirer_head_lr": 1e-3,
                  "target_lr": 2e-3, "tsa": "linear", "distill_mode": "soft",
                  "alignment": "auto"},
    }


def reference_config(seed=0) -> RunConfig:
    return config_from_dict(reference_config_dict(seed))
