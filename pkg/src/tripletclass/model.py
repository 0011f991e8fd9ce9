"""Backbones, classifier/embedding heads, forward passes and checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractError, IntegrityError, NumericalError

CLASSIFIER = "classifier"
EMBEDDING = "embedding"

TINY_CNN = "tiny_cnn"
EXTERNAL_ADAPTER = "external_adapter"

NORM_EPS = 1e-12
PROB_FLOOR = 1e-12

CHECKPOINT_FORMAT = "tripletclass-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    kind: str
    input_size: tuple[int, int, int]
    feature_dim: int
    adapter_id: str | None = None
    trainable: bool = False
    pretrained: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if self.kind not in (TINY_CNN, EXTERNAL_ADAPTER):
            raise ConfigurationError(f"unknown backbone kind {self.kind!r}")
        if self.kind == EXTERNAL_ADAPTER and not self.adapter_id:
            raise ConfigurationError("external_adapter backbones need an adapter_id")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")


@dataclass(frozen=True)
class HeadSpec:
    kind: str
    hidden_widths: tuple[int, ...] = ()
    num_classes: int | None = None
    embed_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.kind not in (CLASSIFIER, EMBEDDING):
            raise ConfigurationError(f"unknown head kind {self.kind!r}")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError("hidden widths must be positive")
        if self.kind == CLASSIFIER and (self.num_classes is None or self.num_classes < 2):
            raise ConfigurationError("classifier heads need num_classes >= 2")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be positive")


# Hidden widths of the classifier heads trained on each pretrained backbone.
HEAD_PRESETS = {
    "vgg19_head": (256, 128),
    "resnet50_head": (256, 128),
    "inception_head": (1024,),
    "densenet_head": (1024, 500),
}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


# -- layers -----------------------------------------------------------------

class TinyCNN(nn.Module):
    """Three conv/ReLU/max-pool stages and a linear 1x1 projection to ``feature_dim`` channels."""

    def __init__(self, in_channels: int, feature_dim: int, widths: Sequence[int] = (16, 32, 64)):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for width in widths:
            layers += [nn.Conv2d(prev, width, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2)]
            prev = width
        layers.append(nn.Conv2d(prev, feature_dim, 1))
        self.body = nn.Sequential(*layers)
        self.feature_dim = feature_dim

    def forward(self, x):
        return self.body(x)


def global_average_pool(features) -> torch.Tensor:
    """Spatial mean of a channels-last feature map: [B, h, w, C] -> [B, C]."""
    features = torch.as_tensor(features)
    if features.ndim != 4 or features.shape[1] < 1 or features.shape[2] < 1:
        raise ContractError(f"expected [B, h, w, C] features, got shape {tuple(features.shape)}")
    return features.mean(dim=(1, 2))


def l2_normalize(v, eps: float = NORM_EPS) -> torch.Tensor:
    v = torch.as_tensor(v)
    if v.ndim != 2:
        raise ContractError(f"expected [B, D] vectors, got shape {tuple(v.shape)}")
    norms = torch.linalg.vector_norm(v, dim=1, keepdim=True)
    bad = (norms <= eps) | ~torch.isfinite(norms)
    if bool(bad.any()):
        rows = torch.nonzero(bad.squeeze(1)).flatten().tolist()
        raise NumericalError(f"cannot L2-normalize rows with norm <= {eps} or non-finite norm: {rows[:10]}")
    return v / norms


def _dense_stack(in_dim: int, widths: Sequence[int]) -> tuple[nn.Sequential, int]:
    layers: list[nn.Module] = []
    for width in widths:
        layers += [nn.Linear(in_dim, width), nn.ReLU(inplace=True)]
        in_dim = width
    return nn.Sequential(*layers), in_dim


class Network(nn.Module):
    """Backbone + pooled features + head.

    Takes channels-last batches [B, h, w, c]; returns logits (classifier) or
    unit-norm embeddings (embedding head).
    """

    def __init__(self, backbone: nn.Module, backbone_spec: BackboneSpec, head_spec: HeadSpec):
        super().__init__()
        self.backbone = backbone
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        self.hidden, width = _dense_stack(backbone_spec.feature_dim, head_spec.hidden_widths)
        if head_spec.kind == CLASSIFIER:
            self.out = nn.Linear(width, head_spec.num_classes)
        elif head_spec.embed_dim is not None:
            self.out = nn.Linear(width, head_spec.embed_dim)
        else:
            self.out = nn.Identity()
        if not backbone_spec.trainable:
            for p in self.backbone.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        if not self.backbone_spec.trainable:
            # frozen backbones keep normalization statistics fixed
            self.backbone.eval()
        return self

    def features(self, x: torch.Tensor) -> torch.Tensor:
        fmap = self.backbone(x.permute(0, 3, 1, 2))
        return global_average_pool(fmap.permute(0, 2, 3, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.out(self.hidden(self.features(x)))
        if self.head_spec.kind == EMBEDDING:
            out = l2_normalize(out)
        return out


@dataclass
class TrainedModel:
    backbone: BackboneSpec
    head: HeadSpec
    network: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    class_names: list[str] | None = None

    @property
    def regime(self) -> str:
        return "classifier" if self.head.kind == CLASSIFIER else "triplet"

    @property
    def best_val_loss(self) -> float | None:
        if self.best_epoch is None:
            return None
        return next(r.val_loss for r in self.history if r.epoch == self.best_epoch)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())


# -- construction -----------------------------------------------------------

def _check_input_size(input_size: Sequence[int]) -> tuple[int, int, int]:
    if len(input_size) != 3:
        raise ConfigurationError(f"input_size must be (h, w, c), got {input_size!r}")
    return tuple(int(v) for v in input_size)


def build_tiny_cnn(input_size: Sequence[int], feature_dim: int = 64, seed: int = 0, trainable: bool = True):
    """Return ``(BackboneSpec, TinyCNN)`` with parameters drawn from ``seed``."""
    h, w, c = _check_input_size(input_size)
    if h < 8 or w < 8:
        raise ConfigurationError(f"tiny_cnn needs spatial dims >= 8, got {(h, w)}")
    spec = BackboneSpec(TINY_CNN, (h, w, c), int(feature_dim), trainable=trainable)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = TinyCNN(c, int(feature_dim))
    return spec, net


def build_backbone(spec: BackboneSpec, seed: int = 0) -> nn.Module:
    if spec.kind == TINY_CNN:
        _, net = build_tiny_cnn(spec.input_size, spec.feature_dim, seed, spec.trainable)
        return net
    from .adapters import build_adapter

    net, feature_dim = build_adapter(spec.adapter_id, pretrained=spec.pretrained, seed=seed)
    if feature_dim != spec.feature_dim:
        raise ConfigurationError(
            f"adapter {spec.adapter_id!r} emits {feature_dim} channels but spec says {spec.feature_dim}"
        )
    return net


def build_model(backbone: BackboneSpec, head: HeadSpec, seed: int = 0, class_names=None) -> TrainedModel:
    body = build_backbone(backbone, seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        net = Network(body, backbone, head)
    net.eval()
    return TrainedModel(backbone, head, net, class_names=list(class_names) if class_names else None)


# -- forward passes ---------------------------------------------------------

def as_batch(model: TrainedModel, batch) -> torch.Tensor:
    """Convert a channels-last batch to float32 and check it against the backbone input size."""
    x = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch)
    if x.ndim != 4 or tuple(x.shape[1:]) != model.backbone.input_size:
        raise ContractError(
            f"batch shape {tuple(x.shape)} does not match backbone input [B, {', '.join(map(str, model.backbone.input_size))}]"
        )
    return x.float()


def _run(model: TrainedModel, batch, grad: bool) -> torch.Tensor:
    x = as_batch(model, batch)
    if grad:
        return model.network(x)
    model.network.eval()
    with torch.no_grad():
        return model.network(x)


def classifier_logits(model: TrainedModel, batch, grad: bool = False) -> torch.Tensor:
    if model.head.kind != CLASSIFIER:
        raise ContractError("classifier_forward needs a classifier head")
    return _run(model, batch, grad)


def classifier_forward(model: TrainedModel, batch, grad: bool = False) -> torch.Tensor:
    """Class probabilities [B, K]."""
    return torch.softmax(classifier_logits(model, batch, grad), dim=1)


def embedding_forward(model: TrainedModel, batch, grad: bool = False) -> torch.Tensor:
    """Unit-norm embeddings [B, D]."""
    if model.head.kind != EMBEDDING:
        raise ContractError("embedding_forward needs an embedding head")
    return _run(model, batch, grad)


def cross_entropy(probabilities, labels, floor: float = PROB_FLOOR) -> torch.Tensor:
    """Mean of ``-log p[b, label_b]`` with probabilities clamped at ``floor``."""
    probs = torch.as_tensor(probabilities)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ContractError(f"shape mismatch: probabilities {tuple(probs.shape)}, labels {tuple(labels.shape)}")
    k = probs.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ContractError(f"labels must lie in 0..{k - 1}")
    picked = probs.gather(1, labels[:, None]).squeeze(1)
    return -torch.log(picked.clamp_min(floor)).mean()


# -- checkpoints ------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def checkpoint_sidecar(model: TrainedModel, parameters_file: str, parameters_sha256: str) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "regime": model.regime,
        "backbone": asdict(model.backbone),
        "head": asdict(model.head),
        "class_names": model.class_names,
        "history": [asdict(r) for r in model.history],
        "best_epoch": model.best_epoch,
        "best_val_loss": model.best_val_loss,
        "parameters": {"file": parameters_file, "sha256": parameters_sha256},
    }


def save_checkpoint(model: TrainedModel, directory: str | os.PathLike, stem: str = "model") -> Path:
    """Write ``<stem>.pt`` (state dict) and the ``<stem>.json`` sidecar; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = directory / f"{stem}.pt"
    torch.save(model.network.state_dict(), params)
    sidecar = directory / f"{stem}.json"
    doc = checkpoint_sidecar(model, params.name, _sha256(params))
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_checkpoint(sidecar: str | os.PathLike) -> TrainedModel:
    sidecar = Path(sidecar)
    if not sidecar.is_file():
        raise ConfigurationError(f"checkpoint sidecar not found: {sidecar}")
    doc = json.loads(sidecar.read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{sidecar} is not a {CHECKPOINT_FORMAT} sidecar")
    params = sidecar.parent / doc["parameters"]["file"]
    if not params.is_file():
        raise IntegrityError(f"checkpoint parameters missing: {params}", missing=[str(params)])
    if _sha256(params) != doc["parameters"]["sha256"]:
        raise IntegrityError(f"checkpoint parameters digest mismatch: {params}")
    backbone = BackboneSpec(**{**doc["backbone"], "pretrained": False})
    head = HeadSpec(**doc["head"])
    model = build_model(backbone, head, class_names=doc.get("class_names"))
    model.backbone = BackboneSpec(**doc["backbone"])
    state = torch.load(params, map_location="cpu", weights_only=True)
    model.network.load_state_dict(state)
    model.history = [EpochRecord(**r) for r in doc.get("history", [])]
    model.best_epoch = doc.get("best_epoch")
    return model
