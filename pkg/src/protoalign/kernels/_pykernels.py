"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``PROTOALIGN_BACKEND=python`` is set.  Signatures mirror ``_ckernels``.
"""

from __future__ import annotations

import numpy as np


def _unit_rows(feats):
    norms = np.sqrt(np.einsum("ij,ij->i", feats, feats))
    return feats / norms[:, None], norms


def _project_out(grad_hat, unit, norms):
    # d(f/|f|)/df applied to an upstream gradient
    radial = np.einsum("ij,ij->i", grad_hat, unit)
    return (grad_hat - unit * radial[:, None]) / norms[:, None]


def pfa_terms(feats, protos, prior, tau):
    """Fused T2P / P2T value and raw-feature gradient.

    Returns ``(t2p, p2t, grad_t2p, grad_p2t)``.
    """
    B = feats.shape[0]
    unit, norms = _unit_rows(feats)
    sim = unit @ protos.T
    dist = 1.0 - sim
    logits = sim / tau

    # transport conditional; classes with zero prior take no mass
    live = prior > 0
    top = np.max(np.where(live[None, :], logits, -np.inf), axis=1, keepdims=True)
    weights = np.where(live[None, :], prior[None, :] * np.exp(logits - top), 0.0)
    pi = weights / weights.sum(axis=1, keepdims=True)
    row_cost = np.sum(pi * dist, axis=1)
    t2p = float(np.sum(row_cost)) / B
    g_t2p = (pi * (dist - row_cost[:, None]) / tau - pi) / B

    # per-prototype softmax over the batch
    w = np.exp(logits - logits.max(axis=0, keepdims=True))
    w /= w.sum(axis=0, keepdims=True)
    col_cost = np.sum(w * dist, axis=0)
    p2t = float(np.sum(prior * col_cost))
    g_p2t = prior[None, :] * (w * (dist - col_cost[None, :]) / tau - w)

    grad_t2p = _project_out(g_t2p @ protos, unit, norms)
    grad_p2t = _project_out(g_p2t @ protos, unit, norms)
    return t2p, p2t, grad_t2p, grad_p2t


def cl_terms(queries, positives, neg_pool, neg_idx, tau):
    """Mean InfoNCE over queries with prototype positives and pooled negatives.

    ``queries`` are raw features (Q x D); ``positives`` (Q x D) and
    ``neg_pool`` (P x D) are unit rows; ``neg_idx`` (Q x N) indexes the pool.
    Returns ``(value, grad_queries)``.
    """
    Q = queries.shape[0]
    unit, norms = _unit_rows(queries)
    negs = neg_pool[neg_idx]                          # Q x N x D
    pos_logit = np.einsum("qd,qd->q", unit, positives) / tau
    neg_logit = np.einsum("qd,qnd->qn", unit, negs) / tau
    logits = np.concatenate([pos_logit[:, None], neg_logit], axis=1)
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    z = e.sum(axis=1)
    lse = top[:, 0] + np.log(z)
    value = float(np.sum(lse - pos_logit)) / Q
    q = e / z[:, None]
    grad_hat = (q[:, :1] * positives + np.einsum("qn,qnd->qd", q[:, 1:], negs) - positives) / tau
    return value, _project_out(grad_hat / Q, unit, norms)


def nearest_distances(src, dst):
    """Euclidean distance from each row of ``src`` to its nearest row of ``dst``."""
    diff = src[:, None, :] - dst[None, :, :]
    return np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
