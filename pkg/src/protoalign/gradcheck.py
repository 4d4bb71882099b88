"""Central finite-difference checks for every loss, alone and composed with
the extractor.

The error of one instance is ``max|analytic - numeric| / max|numeric|``
(denominator floored at 1e-12), i.e. relative to the largest gradient entry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .contrastive import ContrastiveBatch, cl_loss
from .linalg import SeededRng, l2_normalize_rows
from .model import MlpExtractor
from .pfa import p2t_loss, pfa_loss, t2p_loss
from .prototypes import PrototypeSet

__all__ = ["EPS", "TOLERANCE", "SuiteResult", "SUITES", "relative_error", "run_suite",
           "run_all", "format_table"]

EPS = 1e-5
TOLERANCE = 1e-4


@dataclass(frozen=True)
class SuiteResult:
    name: str
    seeds: int
    max_rel_error: float
    worst_seed: int
    elapsed_seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n)) / max(float(np.max(np.abs(n))), 1e-12))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x``, perturbed in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * eps)
    return g


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------


def _protos(rng: SeededRng, C: int, D: int, tau: float = 0.1) -> PrototypeSet:
    w = rng.normal(size=(C, D))
    prior = rng.random(C) + 0.1
    return PrototypeSet(w, prior / prior.sum(), tau)


def _shape(rng: SeededRng) -> tuple[int, int, int]:
    return int(rng.integers(2, 9)), int(rng.integers(2, 6)), int(rng.integers(4, 17))


def _contrastive(rng: SeededRng, B: int, C: int, D: int) -> tuple[ContrastiveBatch, float]:
    protos = _protos(rng, C, D)
    nq = int(rng.integers(1, B + 1))
    q_idx = np.sort(rng.choice(B, nq, replace=False))
    cls = rng.integers(0, C, size=nq)
    N = int(rng.integers(1, 9))
    pool = l2_normalize_rows(rng.normal(size=(B, D)))[0]
    batch = ContrastiveBatch(B, cls, q_idx, rng.integers(0, B, size=(nq, N)),
                             np.empty((nq, D)), np.ascontiguousarray(protos.weights[cls]), pool)
    return batch, float(rng.choice([0.07, 0.1, 0.5], 1, False)[0])


_LOSSES = {"t2p": t2p_loss, "p2t": p2t_loss, "pfa": pfa_loss}


def _feature_case(name: str, seed: int) -> float:
    rng = SeededRng(seed)
    B, C, D = _shape(rng)
    f = rng.normal(size=(B, D))
    if name == "cl":
        batch, tau = _contrastive(rng, B, C, D)
        value = lambda: cl_loss(batch.with_query_features(f), tau).value
        analytic = cl_loss(batch.with_query_features(f), tau).grad_features
    else:
        protos = _protos(rng, C, D, float(rng.choice([0.05, 0.1, 0.5], 1, False)[0]))
        loss = _LOSSES[name]
        value = lambda: loss(f, protos).value
        analytic = loss(f, protos).grad_features
    return relative_error(analytic, numeric_gradient(value, f))


def _composed_case(name: str, seed: int) -> float:
    rng = SeededRng(seed)
    B, C, D = _shape(rng)
    d_in = int(rng.integers(2, 7))
    net = MlpExtractor.initialize([d_in, int(rng.integers(3, 9)), D], rng)
    x = rng.normal(size=(B, d_in))
    if name == "cl":
        batch, tau = _contrastive(rng, B, C, D)
        loss = lambda f: cl_loss(batch.with_query_features(f), tau)
    else:
        protos = _protos(rng, C, D)
        loss = lambda f, _l=_LOSSES[name]: _l(f, protos)
    feats, cache = net.forward(x)
    grads = net.backward(cache, loss(feats).grad_features)
    worst = 0.0
    for key in net.param_names():
        numeric = numeric_gradient(lambda: loss(net.features(x)).value, net.params[key])
        worst = max(worst, relative_error(grads[key], numeric))
    return worst


SUITES: dict[str, Callable[[int], float]] = {}
for _name in ("t2p", "p2t", "pfa", "cl"):
    SUITES[_name] = lambda s, _n=_name: _feature_case(_n, s)
for _name in ("t2p", "p2t", "pfa", "cl"):
    SUITES[f"mlp+{_name}"] = lambda s, _n=_name: _composed_case(_n, s)


def run_suite(name: str, seeds: int = 20) -> SuiteResult:
    start = time.perf_counter()
    errors = [SUITES[name](s) for s in range(seeds)]
    worst = int(np.argmax(errors))
    return SuiteResult(name, seeds, errors[worst], worst, time.perf_counter() - start)


def run_all(seeds: int = 20) -> list[SuiteResult]:
    return [run_suite(name, seeds) for name in SUITES]


def format_table(results: list[SuiteResult]) -> str:
    lines = [f"{'suite':<10} {'seeds':>5} {'max rel err':>12} {'worst':>5}  result"]
    for r in results:
        lines.append(f"{r.name:<10} {r.seeds:>5} {r.max_rel_error:>12.3e} {r.worst_seed:>5}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
