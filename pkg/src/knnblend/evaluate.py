"""Accuracy evaluation over (k, temperature, knn_weight) grids, reported as CSV.

The sweep searches each query once at the largest k and reuses prefixes of
the sorted hit list for smaller k values; because hits are totally ordered by
(distance, index) this is exactly equivalent to searching per k.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import argmax_label
from .datastore import Datastore
from .retrieval import RetrievalParams, interpolate, knn_distribution, predict
from .training import TrainExample

__all__ = [
    "CSV_HEADER",
    "EvalReport",
    "EvalRow",
    "SweepSpec",
    "evaluate_config",
    "run_sweep",
    "write_report_csv",
]

CSV_HEADER = "k,T,lambda,accuracy,n_correct,n_total"


@dataclass(frozen=True)
class SweepSpec:
    """Grid of retrieval settings to evaluate, one row per combination."""

    k_values: tuple[int, ...] = (1, 8, 64)
    temperature_values: tuple[float, ...] = (1.0, 10.0, 100.0)
    knn_weight_values: tuple[float, ...] = (0.0, 0.5, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(
            self, "temperature_values", tuple(float(t) for t in self.temperature_values)
        )
        object.__setattr__(
            self, "knn_weight_values", tuple(float(w) for w in self.knn_weight_values)
        )
        if not self.k_values or not self.temperature_values or not self.knn_weight_values:
            raise ValueError("sweep lists must be non-empty")
        for k in self.k_values:
            if k < 1:
                raise ValueError(f"k must be >= 1, got {k}")
        for t in self.temperature_values:
            if not t > 0.0:
                raise ValueError(f"temperature must be positive, got {t}")
        for w in self.knn_weight_values:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"knn_weight must be in [0, 1], got {w}")

    def __len__(self) -> int:
        return (
            len(self.k_values) * len(self.temperature_values) * len(self.knn_weight_values)
        )


@dataclass(frozen=True)
class EvalRow:
    """Accuracy of one (k, temperature, knn_weight) configuration."""

    k: int
    temperature: float
    knn_weight: float
    accuracy: float
    n_correct: int
    n_total: int

    def csv_line(self) -> str:
        return (
            f"{self.k},{self.temperature!r},{self.knn_weight!r},"
            f"{self.accuracy!r},{self.n_correct},{self.n_total}"
        )


@dataclass(frozen=True)
class EvalReport:
    """All grid rows in evaluation order plus total wall time."""

    rows: tuple[EvalRow, ...]
    wall_ms: float

    @property
    def best(self) -> EvalRow:
        """Highest-accuracy row; ties keep the earliest grid position."""
        best = self.rows[0]
        for row in self.rows[1:]:
            if row.accuracy > best.accuracy:
                best = row
        return best

    @property
    def accuracy(self) -> float:
        return self.best.accuracy


def evaluate_config(
    model,
    store: Datastore | None,
    examples: Sequence[TrainExample],
    params: RetrievalParams,
) -> EvalRow:
    """Accuracy of one configuration by predicting every example."""
    if len(examples) == 0:
        raise ValueError("cannot evaluate on zero examples")
    n_correct = 0
    for ex in examples:
        if predict(model, store, ex.tokens, params).label == ex.label:
            n_correct += 1
    n_total = len(examples)
    return EvalRow(
        k=int(params.k),
        temperature=float(params.temperature),
        knn_weight=float(params.knn_weight),
        accuracy=n_correct / n_total,
        n_correct=n_correct,
        n_total=n_total,
    )


def run_sweep(
    model,
    store: Datastore | None,
    examples: Sequence[TrainExample],
    sweep: SweepSpec,
) -> EvalReport:
    """Evaluate the full grid; searches once per query at max(k).

    Rows appear in k-major, then temperature, then knn_weight order. A store
    is only required when some knn_weight in the grid is positive.
    """
    if len(examples) == 0:
        raise ValueError("cannot evaluate on zero examples")
    started = time.perf_counter()
    num_labels = model.config.num_labels
    need_search = any(w > 0.0 for w in sweep.knn_weight_values)

    encoded = [model.encode(ex.tokens) for ex in examples]
    classifier_probs = [model.classify(h0) for h0, _ in encoded]
    gold = np.array([ex.label for ex in examples], dtype=np.int64)

    hit_lists = None
    if need_search:
        if store is None:
            raise ValueError("a datastore is required when the grid includes knn_weight > 0")
        if store.num_labels != num_labels:
            raise ValueError(
                f"datastore has {store.num_labels} labels but the model has {num_labels}"
            )
        max_k = max(sweep.k_values)
        hit_lists = [store.search(r, max_k) for _, r in encoded]

    rows = []
    n_total = len(examples)
    for k in sweep.k_values:
        for temperature in sweep.temperature_values:
            if hit_lists is not None:
                neighbor_probs = [
                    knn_distribution(hits[:k], temperature, num_labels)
                    for hits in hit_lists
                ]
            for weight in sweep.knn_weight_values:
                n_correct = 0
                for i in range(n_total):
                    if weight == 0.0:
                        final = classifier_probs[i]
                    else:
                        final = interpolate(neighbor_probs[i], classifier_probs[i], weight)
                    if argmax_label(final) == int(gold[i]):
                        n_correct += 1
                rows.append(
                    EvalRow(
                        k=k,
                        temperature=temperature,
                        knn_weight=weight,
                        accuracy=n_correct / n_total,
                        n_correct=n_correct,
                        n_total=n_total,
                    )
                )
    wall_ms = (time.perf_counter() - started) * 1000.0
    return EvalReport(rows=tuple(rows), wall_ms=wall_ms)


def write_report_csv(report: EvalReport, path) -> None:
    """Fixed-header CSV, one line per grid row, reproducible byte for byte."""
    lines = [CSV_HEADER]
    lines.extend(row.csv_line() for row in report.rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
