"""Contrastive batches built from an uncertainty partition, and the
prototype-positive InfoNCE loss over them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .linalg import SeededRng, as_matrix, l2_normalize_rows
from .pfa import LossResult
from .prototypes import PrototypeSet
from .uncertainty import UncertaintyPartition

__all__ = ["ContrastiveBatch", "sample_contrastive_batch", "cl_loss"]


@dataclass(frozen=True)
class ContrastiveBatch:
    """Sampled queries, their prototype positives and snapshot negatives.

    ``query_index`` and ``negative_index`` refer to rows of the source batch.
    ``query_features`` are raw live-extractor rows; ``positives`` and
    ``negative_pool`` are unit rows and carry no gradient.
    """

    batch_size: int
    query_class: np.ndarray
    query_index: np.ndarray
    negative_index: np.ndarray
    query_features: np.ndarray
    positives: np.ndarray
    negative_pool: np.ndarray
    skipped_classes: tuple[int, ...] = field(default=())

    @property
    def num_queries(self) -> int:
        return int(self.query_index.size)

    def is_empty(self) -> bool:
        return self.num_queries == 0

    def participating_classes(self) -> np.ndarray:
        return np.unique(self.query_class)

    def with_query_features(self, live_feats) -> "ContrastiveBatch":
        """Re-gather queries from a new live batch, keeping every sampled index."""
        live = as_matrix(live_feats, name="live features")
        return ContrastiveBatch(self.batch_size, self.query_class, self.query_index,
                                self.negative_index, live[self.query_index],
                                self.positives, self.negative_pool, self.skipped_classes)


def sample_contrastive_batch(part: UncertaintyPartition, live_feats, snapshot_feats,
                             protos: PrototypeSet, K: int, N: int,
                             rng: SeededRng) -> ContrastiveBatch:
    """Draw up to ``K`` queries per class without replacement and ``N``
    negatives per query (with replacement only when the class's negative set
    is smaller than ``N``).  Classes lacking queries or negatives are skipped.
    """
    if K < 1 or N < 1:
        raise InvalidArgumentError(f"K and N must be positive, got K={K}, N={N}")
    live = as_matrix(live_feats, name="live features")
    snap = as_matrix(snapshot_feats, name="snapshot features")
    if live.shape != snap.shape:
        raise InvalidArgumentError("live and snapshot batches must be index-aligned")

    classes, q_idx, n_idx, skipped = [], [], [], []
    for c in range(part.num_classes):
        P, Nc = part.queries[c], part.negatives[c]
        if P.size == 0 or Nc.size == 0:
            skipped.append(c)
            continue
        picked = np.sort(rng.choice(P, min(K, P.size), replace=False))
        for i in picked:
            n_idx.append(rng.choice(Nc, N, replace=Nc.size < N))
        q_idx.extend(picked.tolist())
        classes.extend([c] * picked.size)

    D = live.shape[1]
    q_idx = np.asarray(q_idx, dtype=np.int64)
    neg = np.asarray(n_idx, dtype=np.int64).reshape(len(q_idx), N)
    cls = np.asarray(classes, dtype=np.int64)
    pool = l2_normalize_rows(snap)[0] if snap.shape[0] else snap
    return ContrastiveBatch(
        batch_size=live.shape[0],
        query_class=cls,
        query_index=q_idx,
        negative_index=neg,
        query_features=live[q_idx] if q_idx.size else np.empty((0, D)),
        positives=np.ascontiguousarray(protos.weights[cls]) if cls.size else np.empty((0, D)),
        negative_pool=np.ascontiguousarray(pool),
        skipped_classes=tuple(skipped),
    )


def cl_loss(batch: ContrastiveBatch, tau: float) -> LossResult:
    """Mean over sampled queries of ``-log`` of the positive's softmax share
    among {positive} and its negatives.

    The gradient is scattered back onto the rows of the source batch; rows
    that were not sampled as queries get zero.
    """
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {tau}")
    if batch.is_empty():
        raise InvalidArgumentError("contrastive batch is empty")
    value, g = kernels.cl_terms(batch.query_features, batch.positives, batch.negative_pool,
                                batch.negative_index, tau)
    grad = np.zeros((batch.batch_size, batch.query_features.shape[1]))
    np.add.at(grad, batch.query_index, g)
    return LossResult(value, grad)
