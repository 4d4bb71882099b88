"""Overlap and boundary-distance metrics for label arrays and 2-D masks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, UndefinedMetricError

__all__ = ["dice", "assd_2d", "boundary_pixels", "confusion_matrix",
           "per_class_dice", "thread_count"]


def thread_count() -> int:
    """Worker cap from ``PROTOALIGN_THREADS`` (default 1)."""
    raw = os.environ.get("PROTOALIGN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgumentError(f"PROTOALIGN_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _masks(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(mask_a, mask_b) -> float:
    """2|A&B| / (|A|+|B|); two empty masks score 1."""
    a, b = _masks(mask_a, mask_b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary_pixels(mask) -> np.ndarray:
    """Coordinates (row, col) of foreground pixels with a background
    4-neighbour; outside the array counts as background."""
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise InvalidArgumentError("boundary extraction expects a 2-D mask")
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(m & ~interior).astype(np.float64)


def _mean_nearest(src: np.ndarray, dst: np.ndarray, workers: int) -> float:
    if workers <= 1 or src.shape[0] < 2 * workers:
        return float(np.sum(kernels.nearest_distances(src, dst))) / src.shape[0]
    chunks = np.array_split(src, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: kernels.nearest_distances(c, dst), chunks))
    # fixed reduction order regardless of the worker count
    return float(np.sum(np.concatenate(parts))) / src.shape[0]


def assd_2d(mask_a, mask_b) -> float:
    """Average symmetric surface distance in pixel units (brute force)."""
    a, b = _masks(mask_a, mask_b)
    if not a.any() or not b.any():
        raise UndefinedMetricError("ASSD is undefined for an empty mask")
    ba, bb = boundary_pixels(a), boundary_pixels(b)
    workers = thread_count()
    return 0.5 * (_mean_nearest(ba, bb, workers) + _mean_nearest(bb, ba, workers))


def confusion_matrix(labels, preds, num_classes: int) -> np.ndarray:
    """Counts with truth along rows and prediction along columns."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise InvalidArgumentError("labels and predictions differ in length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_dice(labels, preds, num_classes: int) -> list[float | None]:
    """Dice per class over discrete labels; ``None`` when the class is absent
    from both prediction and truth."""
    cm = confusion_matrix(labels, preds, num_classes)
    out = []
    for c in range(num_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        out.append(None if denom == 0 else float(2 * tp / denom))
    return out
