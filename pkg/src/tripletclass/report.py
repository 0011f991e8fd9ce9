"""Run records, CSV exports, PCA projection and multi-run comparison."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IntegrityError
from .metrics import EvalReport, metrics_table
from .model import EpochRecord

RUN_RECORD = "run.json"
HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "seconds")


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- history ----------------------------------------------------------------

def history_csv(history: Sequence[EpochRecord], wall_clock: bool = True) -> str:
    """``epoch,train_loss,val_loss,seconds``; ``wall_clock=False`` writes 0 seconds."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_HEADER)
    for r in history:
        seconds = round(r.seconds, 3) if wall_clock else 0.0
        writer.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.val_loss)), repr(float(seconds))])
    return buf.getvalue()


def read_history_csv(path: str | os.PathLike) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_loss"]), float(row["seconds"]))
                for row in csv.DictReader(fh)]


# -- projection -------------------------------------------------------------

def project_embeddings_2d(embeddings) -> np.ndarray:
    """Scores on the top two principal components of the centred embeddings.

    Each component is signed so its largest-magnitude loading is positive.
    Identical points yield zeros and a warning.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ConfigurationError(f"projection needs at least 2 points of dimension >= 2, got shape {x.shape}")
    centred = x - x.mean(axis=0)
    if not np.any(np.abs(centred) > 1e-12 * max(1.0, float(np.abs(x).max()))):
        warnings.warn("all embeddings are identical; projection is degenerate", RuntimeWarning, stacklevel=2)
        return np.zeros((x.shape[0], 2))
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:2].copy()
    for comp in components:
        if comp[np.argmax(np.abs(comp))] < 0:
            comp *= -1
    return centred @ components.T


def scatter_coordinates(embeddings) -> np.ndarray:
    """Raw coordinates when already 2-D, otherwise the PCA projection."""
    x = np.asarray(embeddings, dtype=np.float64)
    return x.copy() if x.ndim == 2 and x.shape[1] == 2 else project_embeddings_2d(x)


def projected_csv(labels, coords) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "x", "y"])
    for label, (x, y) in zip(labels, coords):
        writer.writerow([int(label), repr(float(x)), repr(float(y))])
    return buf.getvalue()


# -- run records ------------------------------------------------------------

class RunRecord:
    """``run.json`` in a run directory: config, digests of every emitted file, results."""

    def __init__(self, directory: str | os.PathLike, data: dict | None = None):
        self.directory = Path(directory)
        self.data = data or {"files": {}, "timestamps": {}}

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "RunRecord":
        directory = Path(directory)
        if directory.is_file():
            directory = directory.parent
        path = directory / RUN_RECORD
        if not path.is_file():
            raise IntegrityError(f"run record missing: {path}", missing=[str(path)])
        return cls(directory, json.loads(path.read_text(encoding="utf-8")))

    @classmethod
    def load_or_new(cls, directory: str | os.PathLike) -> "RunRecord":
        if (Path(directory) / RUN_RECORD).is_file():
            return cls.load(directory)
        return cls(directory)

    @property
    def name(self) -> str:
        return self.data.get("name") or self.directory.name

    def write_text(self, relpath: str, text: str) -> Path:
        path = self.directory / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return self.register(relpath)

    def register(self, relpath: str) -> Path:
        path = self.directory / relpath
        self.data["files"][relpath] = sha256_file(path)
        return path

    def stamp(self, event: str):
        self.data["timestamps"][event] = utc_now()

    def save(self) -> Path:
        path = self.directory / RUN_RECORD
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def verify(self) -> None:
        missing, corrupt = [], []
        for rel, digest in sorted(self.data.get("files", {}).items()):
            path = self.directory / rel
            if not path.is_file():
                missing.append(str(path))
            elif sha256_file(path) != digest:
                corrupt.append(str(path))
        if missing:
            raise IntegrityError(f"run {self.name}: missing artifacts: {', '.join(missing)}", missing=missing)
        if corrupt:
            raise IntegrityError(f"run {self.name}: digest mismatch: {', '.join(corrupt)}")

    def path(self, key: str) -> Path | None:
        rel = self.data.get("artifacts", {}).get(key)
        return self.directory / rel if rel else None

    def set_artifact(self, key: str, relpath: str):
        self.data.setdefault("artifacts", {})[key] = relpath

    def eval_report(self) -> EvalReport | None:
        path = self.path("eval_json")
        if path is None:
            return None
        return EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _unique_names(records: Sequence[RunRecord]) -> list[str]:
    seen: dict[str, int] = {}
    names = []
    for rec in records:
        base = rec.name
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return names


def comparison_report(run_dirs: Iterable[str | os.PathLike], out_dir: str | os.PathLike,
                      render: bool = True) -> dict[str, list[Path]]:
    """Comparison table, loss curves, embedding projections and confusion heat maps."""
    records = [RunRecord.load(d) for d in run_dirs]
    if not records:
        raise ConfigurationError("report needs at least one run record")
    for rec in records:
        rec.verify()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = _unique_names(records)
    written: dict[str, list[Path]] = {"csv": [], "figures": []}

    reports = {n: r.eval_report() for n, r in zip(names, records)}
    reports = {n: r for n, r in reports.items() if r is not None}
    if reports:
        path = out / "comparison.csv"
        path.write_text(metrics_table(reports), encoding="utf-8")
        written["csv"].append(path)

    curves = {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "epoch", "train_loss", "val_loss"])
    for name, rec in zip(names, records):
        hist_path = rec.path("history_csv")
        if hist_path is None:
            continue
        history = read_history_csv(hist_path)
        curves[name] = history
        for r in history:
            writer.writerow([name, r.epoch, repr(r.train_loss), repr(r.val_loss)])
    if curves:
        path = out / "loss_curves.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        written["csv"].append(path)

    projections = {}
    for name, rec in zip(names, records):
        emb_path = rec.path("embeddings_csv")
        if emb_path is None:
            continue
        data = np.loadtxt(emb_path, delimiter=",", skiprows=1, ndmin=2)
        labels, coords = data[:, 0].astype(np.int64), scatter_coordinates(data[:, 1:])
        path = out / f"{name}_projected.csv"
        path.write_text(projected_csv(labels, coords), encoding="utf-8")
        written["csv"].append(path)
        projections[name] = (labels, coords, rec.data.get("class_names"))

    if render:
        from . import plotting

        if curves:
            written["figures"].append(plotting.plot_loss_curves(curves, out / "val_loss.png"))
        for name, (labels, coords, class_names) in projections.items():
            written["figures"].append(
                plotting.plot_embedding_scatter(coords, labels, out / f"{name}_embeddings.png",
                                                class_names=class_names, title=name))
        for name, report in reports.items():
            written["figures"].append(plotting.plot_confusion(report.confusion, out / f"{name}_confusion.png",
                                                              title=name))
    return written
