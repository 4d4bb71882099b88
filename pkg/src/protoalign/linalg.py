"""Elementary numeric primitives: softmax, normalization, entropy, ranks,
nearest-rank percentiles and a seeded, platform-portable RNG.

Matrices are plain ``float64`` numpy arrays in C (row-major) order.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

__all__ = [
    "SeededRng",
    "as_matrix",
    "softmax",
    "softmax_rows",
    "l2_normalize",
    "l2_normalize_rows",
    "entropy",
    "entropy_rows",
    "category_order",
    "category_order_rows",
    "percentile",
]


def as_matrix(x, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite, C-contiguous 2-D float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise InvalidArgumentError(f"{name} has {a.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return a


class SeededRng:
    """PCG64-backed generator; equal seeds give equal streams on every platform."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, pool: Sequence[int] | np.ndarray, size: int, replace: bool) -> np.ndarray:
        return self._gen.choice(np.asarray(pool), size=size, replace=replace)

    def spawn(self, tag: int) -> "SeededRng":
        """Independent child stream derived deterministically from this seed."""
        ss = np.random.SeedSequence([self.seed, int(tag)])
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    _check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("logits must be finite")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of a B x C matrix."""
    _check_temperature(temperature)
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(np.dot(v, v)))
    if n == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / n


def l2_normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row; returns ``(unit_rows, norms)``."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero row")
    return m / norms[:, None], norms


def _check_distribution(p: np.ndarray, axis=None) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("probabilities must be finite and nonnegative")
    if np.any(np.abs(p.sum(axis=axis) - 1.0) > 1e-6):
        raise InvalidArgumentError("probabilities must sum to 1")


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    _check_distribution(p)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    _check_distribution(probs, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return -terms.sum(axis=1)


def category_order(p) -> np.ndarray:
    """Rank of each class under descending probability (1 = argmax).

    Ties go to the lower class index.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_distribution(p)
    order = np.lexsort((np.arange(p.size), -p))
    ranks = np.empty(p.size, dtype=np.int64)
    ranks[order] = np.arange(1, p.size + 1)
    return ranks


def category_order_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise :func:`category_order` for a B x C matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    # stable argsort on -p keeps lower index first among ties
    order = np.argsort(-probs, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(probs.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, probs.shape[1] + 1)[None, :]
    return ranks


def percentile(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n/100)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise DegenerateInputError("percentile of an empty set")
    if not 0 < q <= 100:
        raise InvalidArgumentError(f"q must lie in (0, 100], got {q}")
    k = max(1, math.ceil(q * v.size / 100.0))
    return float(v[k - 1])
