"""Run configuration: a flat JSON document layered over named presets.

Resolution order is preset, then config file, then command-line overrides.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .adapters import FEATURE_DIMS
from .errors import ConfigurationError
from .model import CLASSIFIER, EMBEDDING, EXTERNAL_ADAPTER, HEAD_PRESETS, TINY_CNN, BackboneSpec, HeadSpec
from .trainer import FULL_PASS, TrainConfig


@dataclass
class RunConfig:
    name: str = "run"
    dataset_root: str | None = None
    manifest: str | None = None
    output_dir: str | None = None
    image_size: list[int] = field(default_factory=lambda: [64, 64, 3])
    split_ratio: float = 0.8
    regime: str = "classifier"
    backbone: str = TINY_CNN
    feature_dim: int | None = 64
    pretrained: bool = False
    trainable: bool | None = None
    head: str | None = None
    head_hidden: list[int] = field(default_factory=list)
    embed_dim: int | None = None
    learning_rate: float = 1e-3
    epochs: int = 30
    steps_per_epoch: int | str = FULL_PASS
    validation_steps: int | str = FULL_PASS
    batch_size: int = 18
    element_kind: str = "float32"
    margin: float = 0.4
    distance: str = "euclidean"
    mining: str = "random"
    augment: bool = False
    num_workers: int = 0
    k: int = 1
    seed: int = 0
    record_wall_clock: bool = True

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime, learning_rate=self.learning_rate, epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch, validation_steps=self.validation_steps,
            batch_size=self.batch_size, element_kind=self.element_kind, seed=self.seed,
            margin=self.margin, distance=self.distance, mining=self.mining,
            augment=self.augment, num_workers=self.num_workers,
        )

    def backbone_spec(self) -> BackboneSpec:
        if self.backbone == TINY_CNN:
            trainable = True if self.trainable is None else self.trainable
            return BackboneSpec(TINY_CNN, tuple(self.image_size), self.feature_dim or 64, trainable=trainable)
        return BackboneSpec(EXTERNAL_ADAPTER, tuple(self.image_size), FEATURE_DIMS[self.backbone],
                            adapter_id=self.backbone, trainable=bool(self.trainable), pretrained=self.pretrained)

    def head_widths(self) -> tuple[int, ...]:
        if self.head is not None:
            return HEAD_PRESETS[self.head]
        return tuple(self.head_hidden)

    def head_spec(self, num_classes: int) -> HeadSpec:
        if self.regime == "classifier":
            return HeadSpec(CLASSIFIER, self.head_widths(), num_classes=num_classes)
        return HeadSpec(EMBEDDING, self.head_widths(), embed_dim=self.embed_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_TRIPLET_LR = {"vgg19": 1e-5, "resnet50": 1e-4, "inception_resnet_v2": 1e-5, "densenet121": 1e-4}
_CLASSIFIER_HEAD = {"vgg19": "vgg19_head", "resnet50": "resnet50_head",
                    "inception_resnet_v2": "inception_head", "densenet121": "densenet_head"}
_CLASSIFIER_INPUT = {"inception_resnet_v2": [299, 299, 3]}


def _backbone_presets() -> dict[str, dict[str, Any]]:
    presets = {}
    for backbone in _TRIPLET_LR:
        presets[f"{backbone}-classifier"] = {
            "name": f"{backbone}-classifier", "regime": "classifier", "backbone": backbone,
            "pretrained": True, "head": _CLASSIFIER_HEAD[backbone],
            "image_size": _CLASSIFIER_INPUT.get(backbone, [224, 224, 3]),
            "learning_rate": 1e-3, "epochs": 30, "batch_size": 18,
            "steps_per_epoch": FULL_PASS, "validation_steps": FULL_PASS, "element_kind": "float32",
        }
        presets[f"{backbone}-triplet"] = {
            "name": f"{backbone}-triplet", "regime": "triplet", "backbone": backbone,
            "pretrained": True, "head": None, "head_hidden": [], "embed_dim": None,
            "image_size": [128, 128, 3], "learning_rate": _TRIPLET_LR[backbone],
            "epochs": 10, "steps_per_epoch": 150, "validation_steps": 50, "batch_size": 16,
            "margin": 0.4, "element_kind": "float16", "k": 1,
        }
    return presets


PRESETS: dict[str, dict[str, Any]] = {
    **_backbone_presets(),
    "tiny-classifier": {
        "name": "tiny-classifier", "regime": "classifier", "backbone": TINY_CNN, "feature_dim": 64,
        "head_hidden": [64], "image_size": [64, 64, 3], "learning_rate": 1e-3, "epochs": 15,
        "batch_size": 18, "steps_per_epoch": FULL_PASS, "validation_steps": FULL_PASS,
    },
    "tiny-triplet": {
        "name": "tiny-triplet", "regime": "triplet", "backbone": TINY_CNN, "feature_dim": 64,
        "head_hidden": [], "image_size": [64, 64, 3], "learning_rate": 1e-3, "epochs": 10,
        "steps_per_epoch": 50, "validation_steps": 10, "batch_size": 16, "margin": 0.4, "k": 1,
    },
}


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _validate(data: Mapping[str, Any]) -> list[str]:
    """Field-level diagnostics; empty when ``data`` is a valid RunConfig document."""
    errors = []
    for key in data:
        if key not in _FIELD_TYPES:
            errors.append(f"{key}: unknown field")

    def check(name, ok, message):
        if name in data and not ok(data[name]):
            errors.append(f"{name}: {message} (got {data[name]!r})")

    is_int = lambda v: isinstance(v, int) and not isinstance(v, bool)
    is_num = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
    opt_str = lambda v: v is None or isinstance(v, str)
    check("name", lambda v: isinstance(v, str) and v != "", "must be a non-empty string")
    for name in ("dataset_root", "manifest", "output_dir"):
        check(name, opt_str, "must be a string path or null")
    check("image_size", lambda v: isinstance(v, list) and len(v) == 3 and all(is_int(x) and x > 0 for x in v),
          "must be [height, width, channels] of positive integers")
    check("split_ratio", lambda v: is_num(v) and 0 < v < 1, "must lie in (0, 1)")
    check("regime", lambda v: v in ("classifier", "triplet"), "must be 'classifier' or 'triplet'")
    check("backbone", lambda v: v == TINY_CNN or v in FEATURE_DIMS,
          f"must be {TINY_CNN!r} or one of {sorted(FEATURE_DIMS)}")
    check("feature_dim", lambda v: v is None or (is_int(v) and v > 0), "must be a positive integer")
    for name in ("pretrained", "augment", "record_wall_clock"):
        check(name, lambda v: isinstance(v, bool), "must be true or false")
    check("trainable", lambda v: v is None or isinstance(v, bool), "must be true, false or null")
    check("head", lambda v: v is None or v in HEAD_PRESETS, f"must be null or one of {sorted(HEAD_PRESETS)}")
    check("head_hidden", lambda v: isinstance(v, list) and all(is_int(x) and x > 0 for x in v),
          "must be a list of positive integers")
    check("embed_dim", lambda v: v is None or (is_int(v) and v > 0), "must be null or a positive integer")
    check("learning_rate", lambda v: is_num(v) and v >= 0, "must be a non-negative number")
    for name in ("epochs", "batch_size", "k"):
        check(name, lambda v: is_int(v) and v >= 1, "must be a positive integer")
    for name in ("steps_per_epoch", "validation_steps"):
        check(name, lambda v: v == FULL_PASS or (is_int(v) and v >= 1), f"must be a positive integer or {FULL_PASS!r}")
    check("element_kind", lambda v: v in ("float32", "float16"), "must be 'float32' or 'float16'")
    check("margin", lambda v: is_num(v) and v >= 0, "must be a non-negative number")
    check("distance", lambda v: v in ("euclidean", "squared_euclidean"), "must be 'euclidean' or 'squared_euclidean'")
    check("mining", lambda v: v in ("random", "semi_hard"), "must be 'random' or 'semi_hard'")
    check("num_workers", lambda v: is_int(v) and v >= 0, "must be a non-negative integer")
    check("seed", is_int, "must be an integer")
    return errors


def resolve_config(preset: str | None = None, file_values: Mapping[str, Any] | None = None,
                   overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {preset!r}; known: {sorted(PRESETS)}")
        data.update(PRESETS[preset])
    data.update(file_values or {})
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    errors = _validate(data)
    if errors:
        raise ConfigurationError("invalid run config: " + "; ".join(errors))
    cfg = RunConfig(**data)
    if cfg.regime == "triplet" and FULL_PASS in (cfg.steps_per_epoch, cfg.validation_steps):
        raise ConfigurationError("steps_per_epoch/validation_steps: triplet runs need integer step counts")
    return cfg


def load_config_file(path: str | os.PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def load_preset(name: str) -> RunConfig:
    return resolve_config(preset=name)
