"""Training loops for the softmax-classifier and triplet regimes."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import torch

from .dataset import TRAIN, VALIDATION, AugmentConfig, DatasetManifest, ImageLoader, batch_iterator
from .errors import ConfigurationError, ContractError, NumericalError, TrainingError, ValidationError
from .model import CLASSIFIER, EMBEDDING, EpochRecord, TrainedModel, as_batch, classifier_forward, cross_entropy
from .triplet import TripletConfig, mine_semi_hard, sample_triplet_indices, triplet_loss

log = logging.getLogger(__name__)

FULL_PASS = "full-pass"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    regime: str = CLASSIFIER
    learning_rate: float = 1e-3
    epochs: int = 30
    steps_per_epoch: int | str = FULL_PASS
    validation_steps: int | str = FULL_PASS
    batch_size: int = 18
    element_kind: str = "float32"
    seed: int = 0
    margin: float = 0.4
    distance: str = "euclidean"
    mining: str = "random"
    augment: bool = False
    num_workers: int = 0

    def __post_init__(self):
        if self.regime not in ("classifier", "triplet"):
            raise ConfigurationError(f"regime must be 'classifier' or 'triplet', got {self.regime!r}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError("learning_rate must be a finite non-negative number")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        for name in ("steps_per_epoch", "validation_steps"):
            value = getattr(self, name)
            if value != FULL_PASS and not (isinstance(value, int) and value >= 1):
                raise ConfigurationError(f"{name} must be a positive integer or {FULL_PASS!r}")
        if self.regime == "triplet" and (self.steps_per_epoch == FULL_PASS or self.validation_steps == FULL_PASS):
            raise ConfigurationError("triplet training needs integer steps_per_epoch and validation_steps")
        if self.mining not in ("random", "semi_hard"):
            raise ConfigurationError(f"mining must be 'random' or 'semi_hard', got {self.mining!r}")

    def triplet_config(self) -> TripletConfig:
        return TripletConfig(margin=self.margin, distance=self.distance, batch_size=self.batch_size)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    first_moment: list[torch.Tensor]
    second_moment: list[torch.Tensor]

    @classmethod
    def zeros_like(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls(0, [torch.zeros_like(torch.as_tensor(p)) for p in params],
                   [torch.zeros_like(torch.as_tensor(p)) for p in params])


def adam_update(params, grads, state: AdamState | None, learning_rate: float,
                betas: tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
    """One bias-corrected Adam step. Pure: returns new ``(params, state)``."""
    params = [torch.as_tensor(p) for p in params]
    grads = [torch.as_tensor(g) for g in grads]
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ContractError("params and grads are not shape-aligned")
    for i, g in enumerate(grads):
        if not bool(torch.isfinite(g).all()):
            raise NumericalError(f"non-finite gradient in parameter tensor {i}")
    state = state or AdamState.zeros_like(params)
    b1, b2 = betas
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params.append(p - learning_rate * m_hat / (torch.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class _Optimizer:
    """Applies :func:`adam_update` to the trainable parameters of a network in place."""

    def __init__(self, network: torch.nn.Module, learning_rate: float):
        self.params = [p for p in network.parameters() if p.requires_grad]
        self.learning_rate = learning_rate
        self.state: AdamState | None = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in self.params]
        with torch.no_grad():
            new, self.state = adam_update([p.detach() for p in self.params], grads, self.state, self.learning_rate)
            for p, q in zip(self.params, new):
                p.copy_(q)


# -- shared loop ------------------------------------------------------------

def _check_finite(loss: torch.Tensor, epoch: int, step: int, phase: str) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingError(f"{phase} loss diverged ({value}) at epoch {epoch}, step {step}", epoch=epoch, step=step)
    return value


def _fit(model: TrainedModel, cfg: TrainConfig, run_epoch, validate) -> TrainedModel:
    opt = _Optimizer(model.network, cfg.learning_rate)
    best_state, best_loss = None, math.inf
    model.history = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        model.network.train()
        try:
            train_loss = run_epoch(epoch, opt)
        except NumericalError as exc:
            raise TrainingError(f"numerical failure in epoch {epoch}: {exc}", epoch=epoch) from exc
        model.network.eval()
        with torch.no_grad():
            val_loss = validate(epoch)
        record = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - start)
        model.history.append(record)
        log.info("epoch %d/%d train_loss=%.5f val_loss=%.5f (%.1fs)", epoch, cfg.epochs, train_loss, val_loss, record.seconds)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.network.state_dict())
            model.best_epoch = epoch
    model.network.load_state_dict(best_state)
    model.network.eval()
    return model


# -- classifier regime ------------------------------------------------------

def _classifier_batches(data, split, cfg, loader, epoch, steps, augment_config) -> Iterator:
    """Yield training batches for one epoch; integer ``steps`` wraps around the split."""
    if steps == FULL_PASS:
        yield from batch_iterator(data, split, cfg.batch_size, cfg.seed, epoch=epoch, loader=loader,
                                  augment_config=augment_config, num_workers=cfg.num_workers)
        return
    emitted, sub = 0, 0
    while emitted < steps:
        for batch in batch_iterator(data, split, cfg.batch_size, cfg.seed, epoch=epoch * 10_000 + sub,
                                    loader=loader, augment_config=augment_config, num_workers=cfg.num_workers):
            yield batch
            emitted += 1
            if emitted == steps:
                return
        sub += 1


def train_classifier(cfg: TrainConfig, data: DatasetManifest, model: TrainedModel) -> TrainedModel:
    """Minimize cross-entropy with Adam; keeps the lowest-validation-loss parameters."""
    if cfg.regime != "classifier" or model.head.kind != CLASSIFIER:
        raise ConfigurationError("train_classifier needs regime 'classifier' and a classifier head")
    if model.head.num_classes != data.num_classes:
        raise ConfigurationError(f"head has {model.head.num_classes} classes, dataset has {data.num_classes}")
    for split in (TRAIN, VALIDATION):
        if not data.select(split):
            raise ValidationError(f"{split} split is empty")
    model.class_names = data.class_names
    loader = ImageLoader(data.image_size, cfg.element_kind)
    augment_config = AugmentConfig() if cfg.augment else None

    def run_epoch(epoch, opt):
        total, count = 0.0, 0
        for step, (x, y) in enumerate(
            _classifier_batches(data, TRAIN, cfg, loader, epoch, cfg.steps_per_epoch, augment_config), start=1
        ):
            opt.zero_grad()
            loss = cross_entropy(classifier_forward(model, x, grad=True), y)
            value = _check_finite(loss, epoch, step, "train")
            loss.backward()
            opt.step()
            total += value * len(y)
            count += len(y)
        return total / count

    def validate(epoch):
        total, count = 0.0, 0
        batches = batch_iterator(data, VALIDATION, cfg.batch_size, None, loader=loader, num_workers=cfg.num_workers)
        for step, (x, y) in enumerate(batches, start=1):
            if cfg.validation_steps != FULL_PASS and step > cfg.validation_steps:
                break
            loss = cross_entropy(classifier_forward(model, x), y)
            total += _check_finite(loss, epoch, step, "validation") * len(y)
            count += len(y)
        return total / count

    return _fit(model, cfg, run_epoch, validate)


# -- triplet regime ---------------------------------------------------------

def _triplet_step_loss(model, records, labels, loader, cfg, rng, tcfg):
    idx = sample_triplet_indices(labels, cfg.batch_size, rng, model.class_names)
    images = np.stack([loader(records[i]) for i in idx.reshape(-1)])  # rows: a0 p0 n0 a1 p1 n1 ...
    emb = model.network(as_batch(model, images)).reshape(cfg.batch_size, 3, -1)
    if cfg.mining == "semi_hard" and torch.is_grad_enabled():
        flat = emb.reshape(cfg.batch_size * 3, -1)
        flat_labels = labels[idx.reshape(-1)]
        mined = mine_semi_hard(flat.detach().numpy(), flat_labels, tcfg.margin, tcfg.distance)
        return triplet_loss(flat[mined[:, 0]], flat[mined[:, 1]], flat[mined[:, 2]], tcfg)
    return triplet_loss(emb[:, 0], emb[:, 1], emb[:, 2], tcfg)


def train_triplet(cfg: TrainConfig, data: DatasetManifest, model: TrainedModel) -> TrainedModel:
    """Fixed-step triplet training; validation draws fresh triplets seeded by (seed, epoch)."""
    if cfg.regime != "triplet" or model.head.kind != EMBEDDING:
        raise ConfigurationError("train_triplet needs regime 'triplet' and an embedding head")
    splits = {}
    for split in (TRAIN, VALIDATION):
        records = data.select(split)
        if not records:
            raise ValidationError(f"{split} split is empty")
        splits[split] = (records, np.array([r.label.index for r in records], dtype=np.int64))
    model.class_names = data.class_names
    loader = ImageLoader(data.image_size, cfg.element_kind)
    tcfg = cfg.triplet_config()

    def run_epoch(epoch, opt):
        records, labels = splits[TRAIN]
        rng = np.random.default_rng([cfg.seed, epoch, 0])
        total = 0.0
        for step in range(1, cfg.steps_per_epoch + 1):
            opt.zero_grad()
            loss = _triplet_step_loss(model, records, labels, loader, cfg, rng, tcfg)
            total += _check_finite(loss, epoch, step, "train")
            loss.backward()
            opt.step()
        return total / cfg.steps_per_epoch

    def validate(epoch):
        records, labels = splits[VALIDATION]
        rng = np.random.default_rng([cfg.seed, epoch, 1])
        total = 0.0
        for step in range(1, cfg.validation_steps + 1):
            loss = _triplet_step_loss(model, records, labels, loader, cfg, rng, tcfg)
            total += _check_finite(loss, epoch, step, "validation")
        return total / cfg.validation_steps

    return _fit(model, cfg, run_epoch, validate)


def train(cfg: TrainConfig, data: DatasetManifest, model: TrainedModel) -> TrainedModel:
    if cfg.regime == "classifier":
        return train_classifier(cfg, data, model)
    return train_triplet(cfg, data, model)
