"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """Bias-corrected Adam update applied in place to ``params``.

    Weight decay is decoupled: after the adaptive step each parameter is
    shrunk by ``lr * weight_decay * p``.
    """
    if set(params) != set(grads):
        raise InvalidArgumentError("params and grads name different tensors")
    for k in params:
        if params[k].shape != np.shape(grads[k]):
            raise InvalidArgumentError(f"{k}: grad shape {np.shape(grads[k])} != {params[k].shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in sorted(params):
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p = params[k]
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
