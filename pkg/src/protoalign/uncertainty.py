"""Entropy-based split of a prediction batch into reliable queries and
unreliable negatives, per class."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .linalg import as_matrix, category_order_rows, entropy_rows, percentile

__all__ = [
    "PredictionBatch",
    "UncertaintyPartition",
    "class_thresholds",
    "select_queries",
    "select_negatives",
    "partition",
    "THRESHOLD_MODES",
]

THRESHOLD_MODES = ("pseudo_label", "target_class")


@dataclass(frozen=True)
class PredictionBatch:
    probs: np.ndarray
    pseudo_labels: np.ndarray
    entropies: np.ndarray
    ranks: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> "PredictionBatch":
        p = as_matrix(probs, name="probs")
        return cls(p, np.argmax(p, axis=1), entropy_rows(p), category_order_rows(p))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class UncertaintyPartition:
    gamma: np.ndarray
    queries: list[np.ndarray]
    negatives: list[np.ndarray]

    @property
    def num_classes(self) -> int:
        return len(self.queries)

    def is_empty(self) -> bool:
        return not any(len(q) and len(n) for q, n in zip(self.queries, self.negatives))


def _alpha_vector(alpha, num_classes: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.size not in (1, num_classes) or a.ndim > 1:
        raise InvalidArgumentError(f"alpha needs 1 or {num_classes} entries, got {alpha}")
    a = np.broadcast_to(a.reshape(-1), (num_classes,)).copy()
    if np.any(~(a > 0)) or np.any(a > 100):
        raise InvalidArgumentError(f"alpha must lie in (0, 100], got {alpha}")
    return a


def class_thresholds(pred: PredictionBatch, alpha) -> np.ndarray:
    """Per-class entropy threshold: nearest-rank alpha_c-percentile of the
    entropies of samples pseudo-labelled ``c``; ``-inf`` for absent classes."""
    a = _alpha_vector(alpha, pred.num_classes)
    gamma = np.full(pred.num_classes, -math.inf)
    for c in range(pred.num_classes):
        ent = pred.entropies[pred.pseudo_labels == c]
        if ent.size:
            gamma[c] = percentile(ent, a[c])
    return gamma


def select_queries(pred: PredictionBatch, gamma) -> list[np.ndarray]:
    gamma = np.asarray(gamma, dtype=np.float64)
    out = []
    for c in range(pred.num_classes):
        mask = (pred.pseudo_labels == c) & (pred.entropies <= gamma[c])
        out.append(np.flatnonzero(mask))
    return out


def select_negatives(pred: PredictionBatch, gamma, rank_threshold: int = 3,
                     mode: str = "pseudo_label") -> list[np.ndarray]:
    """Unreliable samples that rank class ``c`` at ``rank_threshold`` or worse.

    With ``mode="pseudo_label"`` a sample is unreliable when its entropy
    exceeds the threshold of its own pseudo-label class; ``"target_class"``
    compares against the threshold of the class being collected instead.
    """
    C = pred.num_classes
    if not 2 <= rank_threshold <= C:
        raise InvalidArgumentError(f"rank threshold must lie in [2, {C}], got {rank_threshold}")
    if mode not in THRESHOLD_MODES:
        raise InvalidArgumentError(f"unknown threshold mode {mode!r}")
    gamma = np.asarray(gamma, dtype=np.float64)
    own_unreliable = pred.entropies > gamma[pred.pseudo_labels]
    out = []
    for c in range(C):
        unreliable = own_unreliable if mode == "pseudo_label" else pred.entropies > gamma[c]
        out.append(np.flatnonzero(unreliable & (pred.ranks[:, c] >= rank_threshold)))
    return out


def partition(pred: PredictionBatch, alpha, rank_threshold: int = 3,
              mode: str = "pseudo_label") -> UncertaintyPartition:
    gamma = class_thresholds(pred, alpha)
    return UncertaintyPartition(
        gamma,
        select_queries(pred, gamma),
        select_negatives(pred, gamma, rank_threshold, mode),
    )
