"""Two-stage source-free adaptation: prototype-anchored alignment of the
extractor against the frozen classifier, then contrastive refinement driven
by a frozen post-alignment snapshot."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .contrastive import cl_loss, sample_contrastive_batch
from .errors import InvalidArgumentError
from .linalg import SeededRng, as_matrix, entropy_rows, l2_normalize_rows
from .model import MlpExtractor, Model
from .optim import AdamState, adam_step
from .pfa import pfa_components
from .prototypes import PrototypeSet, em_prior_update, predict_proba, uniform_prior
from .uncertainty import THRESHOLD_MODES, PredictionBatch, partition

log = logging.getLogger(__name__)

__all__ = ["AdaptationConfig", "TrainReport", "BatchSampler",
           "run_pfa_stage", "run_cl_stage", "adapt", "feature_summary", "series_csv", "STAGES"]

STAGES = ("pfa", "cl", "both")
PFA_MODES = ("both", "t2p", "p2t")

# stream tags for SeededRng.spawn
_PFA_BATCHES, _CL_BATCHES, _CL_SAMPLING = 1, 2, 3


@dataclass
class AdaptationConfig:
    tau: float = 0.1
    batch_size: int = 16
    # contrastive-stage batch; None reuses batch_size
    cl_batch_size: int | None = None
    lr: float = 1e-4
    weight_decay: float = 5e-4
    pfa_iters: int = 200
    cl_iters: int = 400
    alpha: float | tuple[float, ...] = 80.0
    K: int = 64
    N: int = 256
    rank_threshold: int = 3
    em_momentum: float = 0.9
    seed: int = 0
    negatives_threshold_mode: str = "pseudo_label"
    cl_keep_pfa_loss: bool = False
    # ablation switch: which transport directions the alignment stage optimizes
    pfa_mode: str = "both"

    def validate(self, num_classes: int | None = None) -> "AdaptationConfig":
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be positive")
        if self.cl_batch_size is not None and self.cl_batch_size < 1:
            raise InvalidArgumentError("cl_batch_size must be positive")
        for name in ("batch_size", "K", "N"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        for name in ("pfa_iters", "cl_iters"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if self.lr <= 0 or self.weight_decay < 0:
            raise InvalidArgumentError("lr must be positive and weight_decay nonnegative")
        alphas = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if np.any(~(alphas > 0)) or np.any(alphas > 100):
            raise InvalidArgumentError(f"alpha must lie in (0, 100], got {self.alpha}")
        if not 0.0 <= self.em_momentum <= 1.0:
            raise InvalidArgumentError("em_momentum must lie in [0, 1]")
        if self.negatives_threshold_mode not in THRESHOLD_MODES:
            raise InvalidArgumentError(f"negatives_threshold_mode must be one of {THRESHOLD_MODES}")
        if self.pfa_mode not in PFA_MODES:
            raise InvalidArgumentError(f"pfa_mode must be one of {PFA_MODES}")
        if num_classes is not None:
            if alphas.size not in (1, num_classes):
                raise InvalidArgumentError(f"alpha needs 1 or {num_classes} entries")
            if not 2 <= self.rank_threshold <= num_classes:
                raise InvalidArgumentError(f"rank_threshold must lie in [2, {num_classes}]")
        return self


@dataclass
class TrainReport:
    stage: str
    iterations: int = 0
    losses: dict[str, list[float]] = field(default_factory=dict)
    prior_trajectory: list[list[float]] = field(default_factory=list)
    noop_iterations: int = 0
    status: str = "ok"
    elapsed_seconds: float = 0.0
    final_metrics: dict | None = None

    def record(self, **values: float) -> None:
        for k, v in values.items():
            self.losses.setdefault(k, []).append(float(v))

    def to_dict(self) -> dict:
        return asdict(self)

    def series_csv(self) -> str:
        """Per-iteration losses (and prior, when tracked) as CSV."""
        return series_csv([self])


def series_csv(reports: list[TrainReport]) -> str:
    """One CSV for several stage reports; cells a stage does not track are empty."""
    keys = sorted({k for r in reports for k in r.losses})
    C = max((len(r.prior_trajectory[0]) for r in reports if r.prior_trajectory), default=0)
    buf = io.StringIO()
    buf.write(",".join(["stage", "iteration"] + keys + [f"prior{c}" for c in range(C)]) + "\n")
    for r in reports:
        for t in range(r.iterations):
            row = [r.stage, str(t)] + [_num(r.losses[k][t]) if k in r.losses else "" for k in keys]
            if C:
                prior = r.prior_trajectory[t] if r.prior_trajectory else [""] * C
                row += [_num(p) if p != "" else "" for p in prior]
            buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".17g")


class BatchSampler:
    """Epoch-style shuffling: each pass visits every index once, reshuffled
    when exhausted."""

    def __init__(self, n: int, batch_size: int, rng: SeededRng):
        if n < 1:
            raise InvalidArgumentError("cannot sample batches from an empty set")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._queue = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while self._queue.size < self.batch_size:
            self._queue = np.concatenate([self._queue, self.rng.permutation(self.n)])
        out, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return out


def _pfa_step_loss(feats, protos: PrototypeSet, mode: str):
    t2p, p2t = pfa_components(feats, protos)
    if mode == "t2p":
        grad = t2p.grad_features
    elif mode == "p2t":
        grad = p2t.grad_features
    else:
        grad = t2p.grad_features + p2t.grad_features
    return t2p.value, p2t.value, grad


def run_pfa_stage(extractor: MlpExtractor, protos: PrototypeSet, target_inputs,
                  config: AdaptationConfig) -> tuple[MlpExtractor, PrototypeSet, TrainReport]:
    """Align target features with the frozen prototypes.

    Returns the adapted extractor (a frozen snapshot), the prototypes
    carrying the final running prior, and the report.  ``extractor`` itself
    is not modified.
    """
    config.validate(protos.num_classes)
    x = as_matrix(target_inputs, cols=extractor.input_dim, name="target inputs")
    if x.shape[0] == 0:
        raise InvalidArgumentError("target set is empty")
    start = time.perf_counter()
    net = extractor.copy()
    report = TrainReport("pfa")
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    sampler = BatchSampler(x.shape[0], config.batch_size, SeededRng(config.seed).spawn(_PFA_BATCHES))
    current = protos.with_prior(uniform_prior(protos.num_classes))
    for _ in range(config.pfa_iters):
        feats, cache = net.forward(x[sampler.next()])
        current = current.with_prior(em_prior_update(feats, current, config.em_momentum))
        t2p, p2t, grad = _pfa_step_loss(feats, current, config.pfa_mode)
        adam_step(state, net.params, net.backward(cache, grad))
        net.mark_updated()
        report.record(t2p=t2p, p2t=p2t, pfa=t2p + p2t)
        report.prior_trajectory.append(current.prior.tolist())
        report.iterations += 1
    report.elapsed_seconds = time.perf_counter() - start
    return net.snapshot(), current, report


def run_cl_stage(live: MlpExtractor, snapshot: MlpExtractor, protos: PrototypeSet, target_inputs,
                 config: AdaptationConfig) -> tuple[MlpExtractor, TrainReport]:
    """Contrastive refinement: queries from the live extractor, predictions and
    negatives from the frozen snapshot.  Neither ``snapshot`` nor ``protos``
    is modified; ``live`` is copied before training."""
    config.validate(protos.num_classes)
    x = as_matrix(target_inputs, cols=live.input_dim, name="target inputs")
    if x.shape[0] == 0:
        raise InvalidArgumentError("target set is empty")
    start = time.perf_counter()
    net = live.copy()
    report = TrainReport("cl")
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    root = SeededRng(config.seed)
    sampler = BatchSampler(x.shape[0], config.cl_batch_size or config.batch_size,
                           root.spawn(_CL_BATCHES))
    pick = root.spawn(_CL_SAMPLING)
    current = protos
    for _ in range(config.cl_iters):
        xb = x[sampler.next()]
        snap_feats = snapshot.features(xb)
        pred = PredictionBatch.from_probs(predict_proba(snap_feats, protos))
        part = partition(pred, config.alpha, config.rank_threshold, config.negatives_threshold_mode)
        feats, cache = net.forward(xb)
        batch = sample_contrastive_batch(part, feats, snap_feats, protos, config.K, config.N, pick)
        report.iterations += 1
        if batch.is_empty() and not config.cl_keep_pfa_loss:
            report.noop_iterations += 1
            report.record(cl=math.nan, queries=0)
            continue
        grad = np.zeros_like(feats)
        value = math.nan
        if not batch.is_empty():
            res = cl_loss(batch, config.tau)
            value, grad = res.value, res.grad_features
        else:
            report.noop_iterations += 1
        extra = {}
        if config.cl_keep_pfa_loss:
            current = current.with_prior(em_prior_update(feats, current, config.em_momentum))
            t2p, p2t, g = _pfa_step_loss(feats, current, config.pfa_mode)
            grad = grad + g
            extra = {"t2p": t2p, "p2t": p2t, "pfa": t2p + p2t}
            report.prior_trajectory.append(current.prior.tolist())
        adam_step(state, net.params, net.backward(cache, grad))
        net.mark_updated()
        report.record(cl=value, queries=batch.num_queries, **extra)
    if report.iterations and report.noop_iterations == report.iterations:
        report.status = "warning: every contrastive batch was empty"
        log.warning("CL stage made no updates: %s", report.status)
    report.elapsed_seconds = time.perf_counter() - start
    return net, report


def feature_summary(extractor: MlpExtractor, protos: PrototypeSet, inputs) -> dict:
    """Label-free snapshot of a model on unlabelled inputs: prediction
    histogram, mean entropy and mean cosine to the predicted prototype."""
    feats = extractor.features(inputs)
    probs = predict_proba(feats, protos)
    preds = np.argmax(probs, axis=1)
    unit = l2_normalize_rows(feats)[0]
    return {
        "n": int(preds.size),
        "prediction_histogram": np.bincount(preds, minlength=protos.num_classes).tolist(),
        "mean_entropy": float(np.mean(entropy_rows(probs))),
        "mean_predicted_cosine": float(np.mean(np.einsum("ij,ij->i", unit, protos.weights[preds]))),
        "prior": protos.prior.tolist(),
    }


def adapt(model: Model, target_inputs, config: AdaptationConfig,
          stage: str = "both") -> tuple[Model, list[TrainReport]]:
    """Run the alignment stage, the contrastive stage, or both in sequence.

    ``stage="cl"`` skips alignment and uses the source extractor as the
    snapshot (the "without alignment" ablation).
    """
    if stage not in STAGES:
        raise InvalidArgumentError(f"stage must be one of {STAGES}")
    config.validate(model.protos.num_classes)
    protos = PrototypeSet(model.protos.weights, model.protos.prior, config.tau)
    reports = []
    extractor = model.extractor
    # the matrices are tiny; a single BLAS thread also keeps every run bit-stable
    with threadpool_limits(limits=1, user_api="blas"):
        if stage in ("pfa", "both"):
            extractor, protos, rep = run_pfa_stage(extractor, protos, target_inputs, config)
            rep.final_metrics = feature_summary(extractor, protos, target_inputs)
            reports.append(rep)
        if stage in ("cl", "both"):
            extractor, rep = run_cl_stage(extractor, extractor.snapshot(), protos, target_inputs, config)
            rep.final_metrics = feature_summary(extractor, protos, target_inputs)
            reports.append(rep)
    final = extractor.copy() if extractor.frozen else extractor
    return Model(final, protos), reports
