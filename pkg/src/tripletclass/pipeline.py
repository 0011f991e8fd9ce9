"""prepare -> train -> evaluate orchestration over run directories."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import dataset as ds
from .config import RunConfig
from .errors import ConfigurationError
from .knn import embed_dataset, fit, predict
from .metrics import EvalReport, evaluate, metrics_table
from .model import build_model, classifier_forward, load_checkpoint, save_checkpoint
from .report import RunRecord, history_csv
from .trainer import train

log = logging.getLogger(__name__)


def _lock(directory: Path) -> FileLock:
    directory.mkdir(parents=True, exist_ok=True)
    return FileLock(str(directory / ".lock"))


def prepare(dataset_root, image_size, ratio: float = 0.8, seed: int = 0, out=None) -> ds.DatasetManifest:
    manifest = ds.split(ds.scan_dataset(dataset_root, image_size), ratio, seed)
    if out is not None:
        manifest.save(out)
    return manifest


def _manifest_for(cfg: RunConfig) -> ds.DatasetManifest:
    if cfg.manifest:
        manifest = ds.DatasetManifest.load(cfg.manifest)
        if tuple(manifest.image_size) != tuple(cfg.image_size):
            manifest = replace(manifest, image_size=tuple(cfg.image_size))
        return manifest
    if not cfg.dataset_root:
        raise ConfigurationError("dataset_root: required when no manifest is given")
    return prepare(cfg.dataset_root, cfg.image_size, cfg.split_ratio, cfg.seed)


def run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) if cfg.output_dir else Path("runs") / cfg.name


def train_run(cfg: RunConfig) -> RunRecord:
    """Train one configuration; writes manifest, checkpoint, history and ``run.json``."""
    out = run_dir(cfg)
    with _lock(out):
        manifest = _manifest_for(cfg)
        record = RunRecord(out)
        record.data.update(name=cfg.name, regime=cfg.regime, config=cfg.to_dict(),
                           class_names=manifest.class_names, manifest_digest=manifest.digest())
        record.stamp("train_started")
        record.write_text("config.json", cfg.to_json())
        record.write_text("manifest.json", manifest.to_json())
        record.set_artifact("manifest", "manifest.json")

        model = build_model(cfg.backbone_spec(), cfg.head_spec(manifest.num_classes), seed=cfg.seed,
                            class_names=manifest.class_names)
        train(cfg.train_config(), manifest, model)

        sidecar = save_checkpoint(model, out)
        record.register(sidecar.name)
        record.register(sidecar.with_suffix(".pt").name)
        record.set_artifact("checkpoint", sidecar.name)
        record.write_text("history.csv", history_csv(model.history, cfg.record_wall_clock))
        record.set_artifact("history_csv", "history.csv")
        record.data["best_epoch"] = model.best_epoch
        record.data["best_val_loss"] = model.best_val_loss
        record.stamp("train_finished")
        record.save()
    return record


def predictions_csv(true_labels, predicted) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "true", "predicted"])
    writer.writerows([i, int(t), int(p)] for i, (t, p) in enumerate(zip(true_labels, predicted)))
    return buf.getvalue()


def evaluate_run(checkpoint, manifest=None, split: str = ds.VALIDATION, k: int | None = None,
                 out=None, batch_size: int = 64) -> tuple[EvalReport, RunRecord]:
    """Argmax of softmax for classifiers; embed-train / fit KNN / predict for triplet models."""
    checkpoint = Path(checkpoint)
    out = Path(out) if out else checkpoint.parent
    model = load_checkpoint(checkpoint)
    if model.regime == "classifier" and k is not None:
        raise ConfigurationError("--k only applies to triplet (embedding) checkpoints")
    manifest_path = Path(manifest) if manifest else checkpoint.parent / "manifest.json"
    data = ds.DatasetManifest.load(manifest_path)
    if tuple(data.image_size) != model.backbone.input_size:
        data = replace(data, image_size=model.backbone.input_size)
    with _lock(out):
        record = RunRecord.load_or_new(out)
        element_kind = record.data.get("config", {}).get("element_kind", "float32")
        truth = data.labels(split)
        if model.regime == "classifier":
            loader = ds.ImageLoader(data.image_size, element_kind, cache=False)
            preds = [classifier_forward(model, x).argmax(dim=1).numpy()
                     for x, _ in ds.batch_iterator(data, split, batch_size, None, loader=loader)]
            predicted = np.concatenate(preds)
        else:
            k = k if k is not None else record.data.get("config", {}).get("k", 1)
            reference = embed_dataset(model, data, ds.TRAIN, batch_size, element_kind)
            queries = embed_dataset(model, data, split, batch_size, element_kind)
            predicted = predict(fit(reference, k), queries.vectors)
            record.write_text("embeddings.csv", queries.csv_text())
            record.set_artifact("embeddings_csv", "embeddings.csv")
        report = evaluate(truth, predicted, data.num_classes, data.class_names)
        name = record.data.get("name") or out.name
        record.data.setdefault("name", name)
        record.data.setdefault("class_names", data.class_names)
        record.data["evaluation"] = {"split": split, "k": k if model.regime == "triplet" else None,
                                     "checkpoint": os.path.relpath(checkpoint, out)}
        for key, rel, text in (("eval_json", "eval.json", report.to_json()),
                               ("metrics_csv", "metrics.csv", metrics_table({name: report})),
                               ("confusion_csv", "confusion.csv", report.confusion.to_csv()),
                               ("predictions_csv", "predictions.csv", predictions_csv(truth, predicted))):
            record.write_text(rel, text)
            record.set_artifact(key, rel)
        record.stamp("evaluated")
        record.save()
    return report, record

