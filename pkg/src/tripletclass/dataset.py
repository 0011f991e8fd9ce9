"""Folder-per-class image datasets: scanning, stratified splitting, loading, augmentation."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError, ContractError, DataError, ValidationError

TRAIN = "train"
VALIDATION = "validation"
SPLITS = (TRAIN, VALIDATION)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}
ELEMENT_KINDS = {"float32": np.float32, "float16": np.float16}

_PIL_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


def element_dtype(kind: str) -> type:
    try:
        return ELEMENT_KINDS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown element kind {kind!r}; expected one of {sorted(ELEMENT_KINDS)}"
        ) from None


def _check_image_size(image_size: Sequence[int]) -> tuple[int, int, int]:
    if len(image_size) != 3 or any(int(v) < 1 for v in image_size):
        raise ConfigurationError(f"image_size must be (height, width, channels), got {image_size!r}")
    h, w, c = (int(v) for v in image_size)
    if c not in _PIL_MODES:
        raise ConfigurationError(f"unsupported channel count {c}; expected 1, 3 or 4")
    return h, w, c


@dataclass(frozen=True, order=True)
class ClassLabel:
    index: int
    name: str


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    label: ClassLabel
    split: str = TRAIN


@dataclass(frozen=True)
class DatasetManifest:
    """Labeled image records plus class inventory and split settings.

    ``records`` are held with absolute paths; the JSON form stores them relative
    to ``root`` so manifests built from the same tree compare byte-for-byte.
    """

    root: Path
    records: tuple[ImageRecord, ...]
    classes: tuple[ClassLabel, ...]
    image_size: tuple[int, int, int]
    seed: int | None = None
    split_ratio: float | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def select(self, split: str) -> list[ImageRecord]:
        if split not in SPLITS:
            raise ConfigurationError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def labels(self, split: str) -> np.ndarray:
        return np.array([r.label.index for r in self.select(split)], dtype=np.int64)

    def class_counts(self, split: str | None = None) -> dict[str, int]:
        counts = {c.name: 0 for c in self.classes}
        for r in self.records:
            if split is None or r.split == split:
                counts[r.label.name] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "root": str(self.root),
            "image_size": list(self.image_size),
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "classes": [{"index": c.index, "name": c.name} for c in self.classes],
            "records": [
                {
                    "path": r.path.relative_to(self.root).as_posix(),
                    "label": r.label.index,
                    "split": r.split,
                }
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: Mapping) -> "DatasetManifest":
        root = Path(data["root"])
        classes = tuple(ClassLabel(int(c["index"]), str(c["name"])) for c in data["classes"])
        by_index = {c.index: c for c in classes}
        records = []
        for r in data["records"]:
            if r["split"] not in SPLITS:
                raise ValidationError(f"record {r['path']!r} has unknown split {r['split']!r}")
            records.append(ImageRecord(root / r["path"], by_index[int(r["label"])], r["split"]))
        return cls(
            root=root,
            records=tuple(records),
            classes=classes,
            image_size=tuple(int(v) for v in data["image_size"]),
            seed=data.get("seed"),
            split_ratio=data.get("split_ratio"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"manifest not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _is_image_file(path: Path) -> bool:
    return path.is_file() and not path.name.startswith(".") and path.suffix.lower() in IMAGE_EXTENSIONS


def scan_dataset(root: str | os.PathLike, image_size: Sequence[int]) -> DatasetManifest:
    """Build a manifest from ``<root>/<class_name>/<image files>``.

    Classes are indexed in lexicographic order of folder name. Every image is
    test-decoded; all records start in the train split until :func:`split` runs.
    """
    image_size = _check_image_size(image_size)
    root = Path(root).resolve()
    if not root.is_dir():
        raise ConfigurationError(f"dataset root does not exist or is not a directory: {root}")

    folders = sorted(
        (p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")),
        key=lambda p: p.name,
    )
    if len(folders) < 2:
        raise ValidationError(f"dataset root {root} needs at least 2 class folders, found {len(folders)}")

    classes = tuple(ClassLabel(i, folder.name) for i, folder in enumerate(folders))
    records = []
    for label, folder in zip(classes, folders):
        files = sorted((p for p in folder.iterdir() if _is_image_file(p)), key=lambda p: p.name)
        if not files:
            raise ValidationError(f"class folder {folder} contains no images")
        for path in files:
            try:
                with Image.open(path) as im:
                    im.verify()
            except (UnidentifiedImageError, OSError, SyntaxError) as exc:
                raise ValidationError(f"cannot decode image {path}: {exc}") from exc
            records.append(ImageRecord(path, label, TRAIN))

    return DatasetManifest(root=root, records=tuple(records), classes=classes, image_size=image_size)


def train_count(n: int, ratio: float) -> int:
    """Number of train records for a class of ``n`` records.

    The fractional remainder goes to train, but a class with at least two
    records always keeps one for validation.
    """
    if n <= 1:
        return n
    # round() guards against 0.7 * 10 == 7.000000000000001
    return min(math.ceil(round(ratio * n, 9)), n - 1)


def split(manifest: DatasetManifest, ratio: float, seed: int) -> DatasetManifest:
    """Stratified train/validation assignment, deterministic in ``seed``."""
    if not (0.0 < ratio < 1.0):
        raise ConfigurationError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    assignment: dict[Path, str] = {}
    for label in manifest.classes:
        members = [r for r in manifest.records if r.label == label]
        order = rng.permutation(len(members))
        n_train = train_count(len(members), ratio)
        for rank, idx in enumerate(order):
            assignment[members[idx].path] = TRAIN if rank < n_train else VALIDATION
    records = tuple(replace(r, split=assignment[r.path]) for r in manifest.records)
    return replace(manifest, records=records, seed=int(seed), split_ratio=float(ratio))


def load_image(record: ImageRecord | str | os.PathLike, image_size: Sequence[int], element_kind: str = "float32") -> np.ndarray:
    """Decode, bilinearly resize and scale an image to ``[0, 1]``; returns (h, w, c)."""
    h, w, c = _check_image_size(image_size)
    dtype = element_dtype(element_kind)
    path = record.path if isinstance(record, ImageRecord) else Path(record)
    try:
        with Image.open(path) as im:
            im = im.convert(_PIL_MODES[c])
            if im.size != (w, h):
                im = im.resize((w, h), resample=Image.Resampling.BILINEAR)
            pixels = np.asarray(im, dtype=np.float32)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"failed to decode image {path}: {exc}", path=path) from exc
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return (pixels / 255.0).astype(dtype)


class ImageLoader:
    """Memoizing wrapper around :func:`load_image` for one size and element kind."""

    def __init__(self, image_size: Sequence[int], element_kind: str = "float32", cache: bool = True):
        self.image_size = _check_image_size(image_size)
        self.element_kind = element_kind
        element_dtype(element_kind)
        self._cache: dict[Path, np.ndarray] | None = {} if cache else None

    def __call__(self, record: ImageRecord) -> np.ndarray:
        if self._cache is None:
            return load_image(record, self.image_size, self.element_kind)
        img = self._cache.get(record.path)
        if img is None:
            img = load_image(record, self.image_size, self.element_kind)
            img.flags.writeable = False
            self._cache[record.path] = img
        return img


# -- augmentation -----------------------------------------------------------

def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1, :].copy()


def vertical_flip(image: np.ndarray) -> np.ndarray:
    return image[::-1, :, :].copy()


def rotate_left(image: np.ndarray) -> np.ndarray:
    """90 degrees counter-clockwise."""
    return np.rot90(image, k=1, axes=(0, 1)).copy()


def rotate_right(image: np.ndarray) -> np.ndarray:
    """90 degrees clockwise."""
    return np.rot90(image, k=-1, axes=(0, 1)).copy()


AUGMENT_OPS = {
    "identity": lambda image: image.copy(),
    "horizontal_flip": horizontal_flip,
    "vertical_flip": vertical_flip,
    "rotate_left": rotate_left,
    "rotate_right": rotate_right,
}
ROTATIONS = ("rotate_left", "rotate_right")


@dataclass(frozen=True)
class AugmentConfig:
    """Selection probabilities for each augmentation op; normalized on use."""

    probabilities: Mapping[str, float] = field(
        default_factory=lambda: {name: 1.0 / len(AUGMENT_OPS) for name in AUGMENT_OPS}
    )

    def __post_init__(self):
        unknown = set(self.probabilities) - set(AUGMENT_OPS)
        if unknown:
            raise ConfigurationError(f"unknown augmentation ops: {sorted(unknown)}")
        weights = list(self.probabilities.values())
        if any(p < 0 for p in weights) or sum(weights) <= 0:
            raise ConfigurationError("augmentation probabilities must be non-negative with positive sum")

    @property
    def names(self) -> list[str]:
        return list(self.probabilities)

    @property
    def weights(self) -> np.ndarray:
        w = np.array(list(self.probabilities.values()), dtype=np.float64)
        return w / w.sum()

    @property
    def uses_rotation(self) -> bool:
        return any(self.probabilities.get(name, 0.0) > 0 for name in ROTATIONS)

    def choose(self, rng: np.random.Generator, size: int | None = None):
        picks = rng.choice(len(self.names), size=size, p=self.weights)
        if size is None:
            return self.names[int(picks)]
        return [self.names[int(i)] for i in picks]


def augment(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig | None = None) -> np.ndarray:
    """Apply one randomly chosen flip/rotation (or identity) to an (h, w, c) image."""
    config = config or AugmentConfig()
    if image.ndim != 3:
        raise ContractError(f"augment expects an (h, w, c) image, got shape {image.shape}")
    if config.uses_rotation and image.shape[0] != image.shape[1]:
        raise ConfigurationError(f"rotations require square images, got {image.shape[:2]}")
    return AUGMENT_OPS[config.choose(rng)](image)


# -- batching ---------------------------------------------------------------

def epoch_order(n: int, shuffle_seed: int | None, epoch: int) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng([int(shuffle_seed), int(epoch)]).permutation(n)


def batch_iterator(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    shuffle_seed: int | None = None,
    *,
    epoch: int = 0,
    element_kind: str = "float32",
    augment_config: AugmentConfig | None = None,
    loader: ImageLoader | None = None,
    num_workers: int = 0,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images [B, h, w, c], labels [B])`` covering ``split`` once.

    Order and augmentation choices are drawn up front from ``(shuffle_seed, epoch)``,
    so the stream is identical for any ``num_workers``. ``shuffle_seed=None`` keeps
    manifest order.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    records = manifest.select(split)
    if not records:
        raise ValidationError(f"split {split!r} is empty")
    loader = loader or ImageLoader(manifest.image_size, element_kind)
    order = epoch_order(len(records), shuffle_seed, epoch)
    ops = None
    if augment_config is not None:
        if augment_config.uses_rotation and manifest.image_size[0] != manifest.image_size[1]:
            raise ConfigurationError("rotations require square images")
        aug_seed = 0 if shuffle_seed is None else int(shuffle_seed)
        ops = augment_config.choose(np.random.default_rng([aug_seed, int(epoch), 1]), size=len(records))

    def load(pos: int) -> np.ndarray:
        img = loader(records[order[pos]])
        return AUGMENT_OPS[ops[pos]](img) if ops is not None else img

    pool = ThreadPoolExecutor(max_workers=num_workers) if num_workers > 0 else None
    try:
        for start in range(0, len(records), batch_size):
            positions = range(start, min(start + batch_size, len(records)))
            images = list(pool.map(load, positions)) if pool else [load(p) for p in positions]
            labels = np.array([records[order[p]].label.index for p in positions], dtype=np.int64)
            yield np.stack(images), labels
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
