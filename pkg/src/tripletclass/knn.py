"""Exact k-nearest-neighbour classification over embeddings."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, ImageLoader, batch_iterator
from .errors import ConfigurationError, ContractError, ValidationError
from .model import TrainedModel, embedding_forward

NORM_TOL = 1e-6


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray  # [N, D], unit-norm rows
    labels: np.ndarray  # [N]
    source_split: str | None = None

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if vectors.ndim != 2 or labels.shape != (vectors.shape[0],):
            raise ContractError(f"vectors {vectors.shape} and labels {labels.shape} are not aligned")
        norms = np.linalg.norm(vectors, axis=1)
        if vectors.shape[0] and np.max(np.abs(norms - 1.0)) > NORM_TOL:
            raise ContractError("embedding rows must be unit-norm")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def csv_text(self) -> str:
        """``label,v0,...,v{D-1}``; floats use ``repr`` so files are reproducible."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label"] + [f"v{i}" for i in range(self.dim)])
        for label, row in zip(self.labels, self.vectors):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.write_text(self.csv_text(), encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path: str | os.PathLike, source_split: str | None = None) -> "EmbeddingSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1:], data[:, 0].astype(np.int64), source_split)


def embed_dataset(model: TrainedModel, manifest: DatasetManifest, split: str,
                  batch_size: int = 64, element_kind: str = "float32") -> EmbeddingSet:
    """Inference-mode embeddings for every record of ``split`` in manifest order."""
    loader = ImageLoader(manifest.image_size, element_kind, cache=False)
    chunks, labels = [], []
    for x, y in batch_iterator(manifest, split, batch_size, None, loader=loader):
        chunks.append(embedding_forward(model, x).double().numpy())
        labels.append(y)
    return EmbeddingSet(np.concatenate(chunks), np.concatenate(labels), split)


@dataclass(frozen=True)
class KnnIndex:
    reference: EmbeddingSet
    k: int = 1
    metric: str = "euclidean"

    def __post_init__(self):
        if len(self.reference) == 0:
            raise ValidationError("cannot fit a KNN index on an empty reference set")
        if not (1 <= self.k <= len(self.reference)):
            raise ConfigurationError(f"k must lie in 1..{len(self.reference)}, got {self.k}")
        if self.metric != "euclidean":
            raise ConfigurationError(f"unsupported metric {self.metric!r}")


def fit(reference: EmbeddingSet, k: int = 1) -> KnnIndex:
    return KnnIndex(reference, k)


def _squared_distances(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    return ((queries[:, None, :] - reference[None, :, :]) ** 2).sum(axis=-1)


def neighbours(index: KnnIndex, queries, max_elements: int = 1 << 24) -> tuple[np.ndarray, np.ndarray]:
    """Positions and distances of the ``k`` nearest references per query.

    Equal distances are ordered by label, so the selected label multiset does
    not depend on reference order.
    """
    queries = np.asarray(queries, dtype=np.float64)
    ref = index.reference
    if queries.ndim != 2 or queries.shape[1] != ref.dim:
        raise ContractError(f"query dim {queries.shape[1:] } does not match reference dim {ref.dim}")
    # direct differences (no |q|^2 + |r|^2 - 2qr expansion) keep near-ties exact
    chunk = max(1, max_elements // max(1, ref.vectors.size))
    all_pos, all_dist = [], []
    for start in range(0, queries.shape[0], chunk):
        sq = _squared_distances(queries[start:start + chunk], ref.vectors)
        for row in sq:
            order = np.lexsort((ref.labels, row))[: index.k]
            all_pos.append(order)
            all_dist.append(np.sqrt(row[order]))
    k = index.k
    return (np.array(all_pos, dtype=np.int64).reshape(-1, k), np.array(all_dist).reshape(-1, k))


def predict(index: KnnIndex, queries) -> np.ndarray:
    """Majority vote over the k nearest references.

    Vote ties go to the label with the smaller summed neighbour distance, then to
    the lower class index.
    """
    positions, distances = neighbours(index, queries)
    out = np.empty(positions.shape[0], dtype=np.int64)
    for i, (pos, dist) in enumerate(zip(positions, distances)):
        labels = index.reference.labels[pos]
        classes = np.unique(labels)
        votes = np.array([np.sum(labels == c) for c in classes])
        sums = np.array([dist[labels == c].sum() for c in classes])
        # lexsort: last key is primary
        best = np.lexsort((classes, sums, -votes))[0]
        out[i] = classes[best]
    return out
