"""Softmax and triplet-loss image classification with KNN evaluation over embeddings."""

from .dataset import DatasetManifest, augment, batch_iterator, load_image, scan_dataset, split
from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    IntegrityError,
    MiningError,
    NumericalError,
    SamplingError,
    TrainingError,
    TripletClassError,
    ValidationError,
)
from .knn import EmbeddingSet, KnnIndex, embed_dataset, fit, predict
from .metrics import EvalReport, evaluate
from .model import (
    BackboneSpec,
    HeadSpec,
    TrainedModel,
    build_model,
    build_tiny_cnn,
    classifier_forward,
    cross_entropy,
    embedding_forward,
    global_average_pool,
    l2_normalize,
)
from .trainer import TrainConfig, adam_update, train_classifier, train_triplet
from .triplet import TripletConfig, euclidean_distance, mine_semi_hard, sample_triplets, triplet_loss

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "DatasetManifest",
    "EmbeddingSet",
    "EvalReport",
    "HeadSpec",
    "IntegrityError",
    "KnnIndex",
    "MiningError",
    "NumericalError",
    "SamplingError",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "TripletClassError",
    "TripletConfig",
    "ValidationError",
    "adam_update",
    "augment",
    "batch_iterator",
    "build_model",
    "build_tiny_cnn",
    "classifier_forward",
    "cross_entropy",
    "embed_dataset",
    "embedding_forward",
    "euclidean_distance",
    "evaluate",
    "fit",
    "global_average_pool",
    "l2_normalize",
    "load_image",
    "mine_semi_hard",
    "predict",
    "sample_triplets",
    "scan_dataset",
    "split",
    "train_classifier",
    "train_triplet",
    "triplet_loss",
]
