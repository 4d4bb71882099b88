"""Prototype-anchored feature alignment: the bi-directional transport cost.

Each loss returns its value together with the gradient with respect to the
raw (un-normalized) feature rows.  The class prior is treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateInputError, InvalidArgumentError
from .linalg import as_matrix
from .prototypes import PrototypeSet

__all__ = ["LossResult", "t2p_loss", "p2t_loss", "pfa_loss", "pfa_components"]


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_features: np.ndarray


def pfa_components(features, protos: PrototypeSet) -> tuple[LossResult, LossResult]:
    """Evaluate target-to-prototype and prototype-to-target costs in one pass."""
    f = as_matrix(features, name="features")
    if f.shape[0] == 0:
        raise InvalidArgumentError("feature batch is empty")
    if f.shape[1] != protos.dim:
        raise InvalidArgumentError(f"feature dim {f.shape[1]} does not match prototype dim {protos.dim}")
    if np.any(np.einsum("ij,ij->i", f, f) == 0.0):
        raise DegenerateInputError("feature batch contains a zero row")
    t2p, p2t, g_t2p, g_p2t = kernels.pfa_terms(f, protos.weights, protos.prior, protos.temperature)
    return LossResult(t2p, g_t2p), LossResult(p2t, g_p2t)


def t2p_loss(features, protos: PrototypeSet) -> LossResult:
    """Mean over samples of the expected cosine cost under the transport conditional."""
    return pfa_components(features, protos)[0]


def p2t_loss(features, protos: PrototypeSet) -> LossResult:
    """Prior-weighted expected cost of moving each prototype onto the batch."""
    return pfa_components(features, protos)[1]


def pfa_loss(features, protos: PrototypeSet) -> LossResult:
    t2p, p2t = pfa_components(features, protos)
    return LossResult(t2p.value + p2t.value, t2p.grad_features + p2t.grad_features)
