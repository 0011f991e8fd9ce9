"""Pretrained feature extractors behind a registry keyed by adapter id.

Each adapter maps an NCHW float batch in ``[0, 1]`` to the backbone's last
convolutional feature map. With ``pretrained=True`` a full-model state dict
``<adapter_id>.pth`` in ``$TRIPLETCLASS_CACHE`` (default ``~/.cache/tripletclass``)
is preferred; failing that the torchvision/timm download path is used with the
same directory as its cache.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from .errors import ConfigurationError

CACHE_ENV = "TRIPLETCLASS_CACHE"

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "tripletclass"))


class ImageNetAdapter(nn.Module):
    def __init__(self, features: nn.Module):
        super().__init__()
        self.features = features
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, x):
        return self.features((x - self.mean) / self.std)


class _ResNetTrunk(nn.Module):
    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, x):
        n = self.net
        x = n.maxpool(n.relu(n.bn1(n.conv1(x))))
        return n.layer4(n.layer3(n.layer2(n.layer1(x))))


class _ForwardFeatures(nn.Module):
    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, x):
        return self.net.forward_features(x)


def _local_weights(adapter_id: str) -> Path | None:
    path = cache_dir() / f"{adapter_id}.pth"
    return path if path.is_file() else None


def _torchvision(name: str, pretrained: bool):
    import torchvision.models as tvm

    local = _local_weights(name) if pretrained else None
    if pretrained and local is None:
        os.environ.setdefault("TORCH_HOME", str(cache_dir()))
        return getattr(tvm, name)(weights="DEFAULT")
    net = getattr(tvm, name)(weights=None)
    if local is not None:
        net.load_state_dict(torch.load(local, map_location="cpu", weights_only=True))
    return net


def _vgg19(pretrained):
    return _torchvision("vgg19", pretrained).features, 512


def _resnet50(pretrained):
    return _ResNetTrunk(_torchvision("resnet50", pretrained)), 2048


def _densenet121(pretrained):
    net = _torchvision("densenet121", pretrained)
    return nn.Sequential(net.features, nn.ReLU()), 1024


def _inception_resnet_v2(pretrained):
    try:
        import timm
    except ImportError:
        raise ConfigurationError("adapter 'inception_resnet_v2' requires the optional 'timm' package") from None
    local = _local_weights("inception_resnet_v2") if pretrained else None
    if local is None:
        os.environ.setdefault("HF_HOME", str(cache_dir()))
    net = timm.create_model("inception_resnet_v2", pretrained=pretrained and local is None)
    if local is not None:
        net.load_state_dict(torch.load(local, map_location="cpu", weights_only=True))
    return _ForwardFeatures(net), 1536


ADAPTERS: dict[str, Callable[[bool], tuple[nn.Module, int]]] = {
    "vgg19": _vgg19,
    "resnet50": _resnet50,
    "densenet121": _densenet121,
    "inception_resnet_v2": _inception_resnet_v2,
}

FEATURE_DIMS = {"vgg19": 512, "resnet50": 2048, "densenet121": 1024, "inception_resnet_v2": 1536}


def register_adapter(adapter_id: str, factory: Callable[[bool], tuple[nn.Module, int]], feature_dim: int):
    """Add a backbone; ``factory(pretrained)`` must return ``(module, feature_dim)``."""
    ADAPTERS[adapter_id] = factory
    FEATURE_DIMS[adapter_id] = feature_dim


def build_adapter(adapter_id: str, pretrained: bool = False, seed: int = 0) -> tuple[nn.Module, int]:
    try:
        factory = ADAPTERS[adapter_id]
    except KeyError:
        raise ConfigurationError(f"unknown backbone adapter {adapter_id!r}; known: {sorted(ADAPTERS)}") from None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        try:
            features, dim = factory(pretrained)
        except ConfigurationError:
            raise
        except Exception as exc:  # download or construction failures
            raise ConfigurationError(f"could not build adapter {adapter_id!r}: {exc}") from exc
    return ImageNetAdapter(features), dim
