"""Triplet construction, distances and the hinge triplet loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .dataset import DatasetManifest, ImageLoader
from .errors import ConfigurationError, ContractError, MiningError, SamplingError

EUCLIDEAN = "euclidean"
SQUARED_EUCLIDEAN = "squared_euclidean"
DISTANCES = (EUCLIDEAN, SQUARED_EUCLIDEAN)


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.4
    distance: str = EUCLIDEAN
    batch_size: int = 16

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigurationError(f"margin must be non-negative, got {self.margin}")
        if self.distance not in DISTANCES:
            raise ConfigurationError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    anchor_labels: np.ndarray
    indices: np.ndarray  # [B, 3] record positions within the split


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def _safe_sqrt(s: torch.Tensor) -> torch.Tensor:
    # exact sqrt for s > 0; value and gradient 0 at s == 0
    positive = s > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, s, torch.ones_like(s))), torch.zeros_like(s))


def row_distances(x: torch.Tensor, y: torch.Tensor, distance: str = EUCLIDEAN) -> torch.Tensor:
    """Distance between matching rows of two [B, D] tensors."""
    sq = ((x - y) ** 2).sum(dim=1)
    if distance == SQUARED_EUCLIDEAN:
        return sq
    if distance == EUCLIDEAN:
        return _safe_sqrt(sq)
    raise ConfigurationError(f"unknown distance {distance!r}")


def triplet_loss(a, p, n, cfg: TripletConfig | None = None, *, reduction: str = "mean") -> torch.Tensor:
    """``max(d(a, p) - d(a, n) + margin, 0)`` averaged over the batch."""
    cfg = cfg or TripletConfig()
    # python sequences keep double precision instead of torch's float32 default
    a, p, n = (t if isinstance(t, torch.Tensor) else torch.as_tensor(np.asarray(t, dtype=np.float64)) for t in (a, p, n))
    if not (a.shape == p.shape == n.shape) or a.ndim != 2:
        raise ContractError(f"triplet shapes differ or are not [B, D]: {tuple(a.shape)}, {tuple(p.shape)}, {tuple(n.shape)}")
    per_row = torch.relu(row_distances(a, p, cfg.distance) - row_distances(a, n, cfg.distance) + cfg.margin)
    if reduction == "none":
        return per_row
    # mean taken about a detached reference row so equal rows reduce exactly
    ref = per_row[0].detach()
    return ref + (per_row - ref).mean()


# -- sampling ---------------------------------------------------------------

def sample_triplet_indices(
    labels: Sequence[int],
    batch_size: int,
    rng: np.random.Generator,
    class_names: Sequence[str] | None = None,
) -> np.ndarray:
    """Draw ``batch_size`` (anchor, positive, negative) positions into ``labels``.

    Anchors are uniform over records, positives uniform over the anchor's class
    minus the anchor, negatives uniform over all records of other classes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    present = np.unique(labels)
    if present.size < 2:
        raise SamplingError(f"triplet sampling needs at least 2 classes, found {present.size}")
    members = {int(c): np.flatnonzero(labels == c) for c in present}
    others = {int(c): np.flatnonzero(labels != c) for c in present}

    out = np.empty((batch_size, 3), dtype=np.int64)
    anchors = rng.integers(labels.size, size=batch_size)
    for i, a in enumerate(anchors):
        c = int(labels[a])
        same = members[c]
        if same.size < 2:
            name = class_names[c] if class_names is not None else str(c)
            raise SamplingError(f"class {name!r} has a single record and cannot supply a positive")
        j = rng.integers(same.size - 1)
        pos = same[j] if same[j] != a else same[-1]  # skip the anchor itself
        neg = others[c][rng.integers(others[c].size)]
        out[i] = (a, pos, neg)
    return out


def sample_triplets(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    rng: np.random.Generator,
    loader: ImageLoader | None = None,
    element_kind: str = "float32",
) -> TripletBatch:
    records = manifest.select(split)
    labels = np.array([r.label.index for r in records], dtype=np.int64)
    idx = sample_triplet_indices(labels, batch_size, rng, manifest.class_names)
    loader = loader or ImageLoader(manifest.image_size, element_kind)

    def stack(col):
        return np.stack([loader(records[i]) for i in idx[:, col]])

    return TripletBatch(stack(0), stack(1), stack(2), labels[idx[:, 0]], idx)


def pairwise_distances(x: np.ndarray, distance: str = EUCLIDEAN) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    return sq if distance == SQUARED_EUCLIDEAN else np.sqrt(sq)


def mine_semi_hard(embeddings, labels, margin: float, distance: str = EUCLIDEAN) -> np.ndarray:
    """Choose one (anchor, positive, negative) triple per anchor that has a positive.

    The positive is the farthest same-class point. The negative is the closest one
    with ``d(a,p) < d(a,n) < d(a,p) + margin``; if none exists, the negative with the
    smallest hinge violation (the farthest) is used. Ties go to the lower index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != labels.size:
        raise ContractError(f"embeddings {emb.shape} do not match {labels.size} labels")
    if np.unique(labels).size < 2:
        raise MiningError("semi-hard mining needs at least 2 classes in the batch")
    d = pairwise_distances(emb, distance)
    triples = []
    for a in range(labels.size):
        pos = np.flatnonzero((labels == labels[a]) & (np.arange(labels.size) != a))
        if pos.size == 0:
            continue
        p = int(pos[np.argmax(d[a, pos])])
        neg = np.flatnonzero(labels != labels[a])
        dn = d[a, neg]
        window = (dn > d[a, p]) & (dn < d[a, p] + margin)
        if window.any():
            cand = neg[window]
            n = int(cand[np.argmin(d[a, cand])])
        else:
            n = int(neg[np.argmax(dn)])
        triples.append((a, p, n))
    if not triples:
        raise MiningError("no anchor in the batch has a same-class positive")
    return np.array(triples, dtype=np.int64)
