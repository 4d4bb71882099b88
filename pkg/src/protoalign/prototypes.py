"""Frozen source prototypes, cosine geometry and the transport conditional."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .linalg import as_matrix, l2_normalize, l2_normalize_rows, softmax_rows

__all__ = [
    "PrototypeSet",
    "TransportPlan",
    "cosine_distance",
    "classifier_logits",
    "transport_conditional",
    "em_prior_update",
    "predict_proba",
    "uniform_prior",
]


def uniform_prior(num_classes: int) -> np.ndarray:
    return np.full(num_classes, 1.0 / num_classes)


def _check_prior(prior: np.ndarray, num_classes: int) -> np.ndarray:
    prior = np.asarray(prior, dtype=np.float64).ravel()
    if prior.shape != (num_classes,):
        raise InvalidArgumentError(f"prior must have {num_classes} entries, got {prior.shape}")
    if np.any(prior < 0) or not np.all(np.isfinite(prior)):
        raise InvalidArgumentError("prior entries must be finite and nonnegative")
    if prior.sum() == 0:
        raise InvalidArgumentError("prior is all zero")
    if abs(prior.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"prior must sum to 1, sums to {prior.sum()!r}")
    return prior


@dataclass(frozen=True)
class PrototypeSet:
    """Classifier weight rows (one unit-norm prototype per class), the class
    prior used by the transport conditional, and the softmax temperature.

    Rows are normalized at construction; the arrays are made read-only so the
    classifier stays frozen for the lifetime of the object.
    """

    weights: np.ndarray
    prior: np.ndarray = field(default=None)
    temperature: float = 0.1

    def __post_init__(self):
        w = as_matrix(self.weights, name="prototype weights")
        if w.shape[0] < 1:
            raise InvalidArgumentError("need at least one prototype")
        unit, norms = l2_normalize_rows(w)
        if np.all(np.abs(norms - 1.0) <= 1e-12):
            # already unit rows: keep the exact bits so checkpoints round-trip
            unit = w.copy()
        unit.setflags(write=False)
        object.__setattr__(self, "weights", unit)
        prior = uniform_prior(w.shape[0]) if self.prior is None else self.prior
        prior = _check_prior(prior, w.shape[0]).copy()
        prior.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def with_prior(self, prior) -> "PrototypeSet":
        """Same prototypes with a different prior (weights are shared, not copied)."""
        new = object.__new__(PrototypeSet)
        p = _check_prior(prior, self.num_classes).copy()
        p.setflags(write=False)
        object.__setattr__(new, "weights", self.weights)
        object.__setattr__(new, "prior", p)
        object.__setattr__(new, "temperature", self.temperature)
        return new


@dataclass(frozen=True)
class TransportPlan:
    """B x C row-stochastic matrix of transport probabilities."""

    probs: np.ndarray

    def assignments(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def cosine_distance(a, b) -> float:
    return 1.0 - float(np.dot(l2_normalize(a), l2_normalize(b)))


def _unit_features(features, protos: PrototypeSet) -> np.ndarray:
    f = as_matrix(features, name="features")
    if f.shape[1] != protos.dim:
        raise InvalidArgumentError(f"feature dim {f.shape[1]} does not match prototype dim {protos.dim}")
    try:
        unit, _ = l2_normalize_rows(f)
    except DegenerateInputError:
        raise DegenerateInputError("feature batch contains a zero row") from None
    return unit


def classifier_logits(features, protos: PrototypeSet) -> np.ndarray:
    """Cosine-similarity logits divided by the temperature (B x C)."""
    return _unit_features(features, protos) @ protos.weights.T / protos.temperature


def transport_conditional(features, protos: PrototypeSet) -> TransportPlan:
    """Prior-weighted softmax over prototypes for every feature row."""
    logits = classifier_logits(features, protos)
    prior = protos.prior
    live = prior > 0
    # log-space add of the prior; zero-prior classes get exactly zero mass
    logp = np.where(live, np.log(np.where(live, prior, 1.0)), -np.inf)
    z = logits + logp[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return TransportPlan(e / e.sum(axis=1, keepdims=True))


def em_prior_update(features, protos: PrototypeSet, momentum: float = 0.9) -> np.ndarray:
    """One E/M pass on a batch blended into the running prior.

    The E-step evaluates the transport conditional under the current prior;
    the M-step takes its batch mean.  Returns a new array; the prior held by
    ``protos`` is left untouched.
    """
    if not 0.0 <= momentum <= 1.0:
        raise InvalidArgumentError(f"momentum must lie in [0, 1], got {momentum}")
    f = as_matrix(features, name="features")
    if f.shape[0] == 0:
        raise InvalidArgumentError("EM update needs a nonempty batch")
    batch_prior = transport_conditional(f, protos).probs.mean(axis=0)
    new = momentum * protos.prior + (1.0 - momentum) * batch_prior
    return new / new.sum()


def predict_proba(features, protos: PrototypeSet) -> np.ndarray:
    """Classifier softmax (no prior), the model's per-sample prediction."""
    return softmax_rows(classifier_logits(features, protos))
