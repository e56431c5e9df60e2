"""Neighbor-vote label distributions and their blend with the classifier.

Retrieved neighbors are turned into a label distribution by a softmax over
temperature-scaled negative distances, aggregated per label. That
distribution is mixed with the classifier's own output by a fixed weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionMismatchError, argmax_label, validate_distribution
from .datastore import Datastore, NeighborHit, RetrievalUnavailableError

__all__ = [
    "Prediction",
    "RetrievalParams",
    "build_datastore",
    "interpolate",
    "knn_distribution",
    "predict",
]


@dataclass(frozen=True)
class RetrievalParams:
    """Neighbor count, distance temperature, and blend weight for the kNN side."""

    k: int = 64
    temperature: float = 10.0
    knn_weight: float = 0.2

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not (float(self.temperature) > 0.0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 <= float(self.knn_weight) <= 1.0):
            raise ValueError(f"knn_weight must be in [0, 1], got {self.knn_weight}")


def knn_distribution(
    hits: Sequence[NeighborHit], temperature: float, num_labels: int
) -> np.ndarray:
    """Label distribution from neighbor hits: weight exp(-distance/temperature),
    summed per label and normalized.

    The scaled negative distances are max-subtracted before exponentiation so
    large distances cannot underflow everything to zero at once.
    """
    if len(hits) == 0:
        raise RetrievalUnavailableError("cannot form a label distribution from zero hits")
    if not (float(temperature) > 0.0):
        raise ValueError(f"temperature must be positive, got {temperature}")
    if int(num_labels) < 1:
        raise ValueError("num_labels must be positive")
    labels = np.array([hit.label for hit in hits], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_labels:
        raise ValueError("hit label outside [0, num_labels)")
    distances = np.array([hit.distance for hit in hits], dtype=np.float64)
    scaled = -distances / float(temperature)
    weights = np.exp(scaled - scaled.max())
    probs = np.zeros(int(num_labels), dtype=np.float64)
    np.add.at(probs, labels, weights)
    return probs / probs.sum()


def interpolate(neighbor_probs, classifier_probs, knn_weight: float) -> np.ndarray:
    """Entry-wise blend: knn_weight * neighbor + (1 - knn_weight) * classifier.

    The endpoints short-circuit to an exact copy of the corresponding input,
    so a weight of 0 or 1 reproduces that distribution bit for bit.
    """
    p_knn = validate_distribution(neighbor_probs)
    p_cls = validate_distribution(classifier_probs)
    if p_knn.shape != p_cls.shape:
        raise DimensionMismatchError(
            f"distribution lengths differ: {p_knn.shape[0]} vs {p_cls.shape[0]}"
        )
    w = float(knn_weight)
    if not (0.0 <= w <= 1.0):
        raise ValueError(f"knn_weight must be in [0, 1], got {knn_weight}")
    if w == 0.0:
        return p_cls.copy()
    if w == 1.0:
        return p_knn.copy()
    return w * p_knn + (1.0 - w) * p_cls


@dataclass(eq=False)
class Prediction:
    """Final label plus the three distributions that produced it.

    neighbor_probs is None when the blend weight was 0 and retrieval was
    skipped entirely.
    """

    label: int
    probs: np.ndarray
    classifier_probs: np.ndarray
    neighbor_probs: np.ndarray | None


def predict(model, store: Datastore | None, tokens, params: RetrievalParams) -> Prediction:
    """Classify one instance, optionally blending in the neighbor vote.

    The retrieval representation r is the query; with knn_weight == 0 the
    datastore is never consulted (it may be empty or None).
    """
    h0, r = model.encode(tokens)
    p_cls = model.classify(h0)
    if params.knn_weight == 0.0:
        p_final = p_cls.copy()
        p_knn = None
    else:
        if store is None:
            raise RetrievalUnavailableError("a datastore is required when knn_weight > 0")
        if store.num_labels != model.config.num_labels:
            raise ValueError(
                f"datastore has {store.num_labels} labels but the model has "
                f"{model.config.num_labels}"
            )
        hits = store.search(r, params.k)
        p_knn = knn_distribution(hits, params.temperature, model.config.num_labels)
        p_final = interpolate(p_knn, p_cls, params.knn_weight)
    return Prediction(
        label=argmax_label(p_final),
        probs=p_final,
        classifier_probs=p_cls,
        neighbor_probs=p_knn,
    )


def build_datastore(model, dataset) -> Datastore:
    """Encode every example and key the store by its retrieval representation."""
    from .model import pool  # local import keeps module load order flexible

    if dataset.input_dim != model.config.input_dim:
        raise DimensionMismatchError(
            f"dataset input_dim {dataset.input_dim} does not match model "
            f"input_dim {model.config.input_dim}"
        )
    if dataset.num_labels != model.config.num_labels:
        raise ValueError(
            f"dataset has {dataset.num_labels} labels but the model has "
            f"{model.config.num_labels}"
        )
    examples = dataset.examples
    if len(examples) == 0:
        return Datastore(
            keys=np.zeros((0, model.config.key_dim)),
            labels=np.zeros(0, dtype=np.int64),
            num_labels=dataset.num_labels,
        )
    pooled = np.stack([pool(ex.tokens, model.config.pooling) for ex in examples])
    cache = model.features(pooled)
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Datastore(keys=cache.r, labels=labels, num_labels=dataset.num_labels)
