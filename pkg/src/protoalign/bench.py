"""Synthetic domain-shift benchmark: Gaussian class clusters, a rotated,
scaled and translated target domain, supervised source pretraining and the
evaluation report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidArgumentError
from .linalg import SeededRng, as_matrix, entropy_rows, l2_normalize_rows, softmax_rows
from .metrics import confusion_matrix, per_class_dice
from .model import MlpExtractor, Model
from .optim import AdamState, adam_step
from .prototypes import PrototypeSet, predict_proba, uniform_prior
from .uncertainty import PredictionBatch, class_thresholds

__all__ = [
    "DomainShiftSpec", "LabeledDataset", "PretrainResult",
    "class_counts", "generate_domains", "pretrain_source", "evaluate",
    "reliable_compactness", "write_dataset_csv", "read_dataset_csv",
]

# stream tags for SeededRng.spawn
_MEANS, _TRANSFORM, _SOURCE, _TARGET, _INIT, _BATCHES = 11, 12, 13, 14, 15, 16


@dataclass
class DomainShiftSpec:
    """Source clusters ``N(mean_c, std^2 I)``; target draws ``x`` from the same
    clusters (with their own proportions) and maps them to ``scale*R x + shift``
    with ``R`` a rotation by ``rotation`` radians in a random plane.

    Generated means form a regular simplex with edge ``separation`` whose
    centroid sits ``center_norm`` away from the origin.  The shift has norm
    ``shift_norm``; its direction is uniformly random unless
    ``shift_span_fraction`` pins the fraction of it lying in the span of the
    centred class means.
    """

    num_classes: int = 4
    input_dim: int = 8
    class_std: float = 0.3
    separation: float = 1.2
    source_proportions: tuple[float, ...] | None = None
    target_proportions: tuple[float, ...] | None = None
    rotation: float = math.pi / 6
    scale: float = 1.3
    shift_norm: float = 1.0
    center_norm: float = 0.0
    shift_span_fraction: float | None = None
    n_source_train: int = 2000
    n_source_eval: int = 1000
    n_target_train: int = 2000
    n_target_eval: int = 1000
    seed: int = 0
    class_means: np.ndarray | None = field(default=None, repr=False)

    def validate(self) -> "DomainShiftSpec":
        if self.num_classes < 2 or self.input_dim < 2:
            raise InvalidArgumentError("need at least 2 classes and 2 input dimensions")
        if not self.class_std > 0:
            raise InvalidArgumentError(f"class_std must be positive, got {self.class_std}")
        if not self.scale > 0:
            raise InvalidArgumentError("scale must be positive")
        if self.class_means is None and self.num_classes > self.input_dim + 1:
            raise InvalidArgumentError("simplex means need num_classes <= input_dim + 1")
        for name in ("source_proportions", "target_proportions"):
            _proportions(getattr(self, name), self.num_classes)
        return self

    def proportions(self, domain: str) -> np.ndarray:
        return _proportions(getattr(self, f"{domain}_proportions"), self.num_classes)


def _proportions(p, num_classes: int) -> np.ndarray:
    if p is None:
        return uniform_prior(num_classes)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (num_classes,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"proportions must be a length-{num_classes} simplex vector, got {p}")
    return p


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __len__(self) -> int:
        return self.labels.shape[0]


def class_counts(proportions, n: int) -> np.ndarray:
    """Largest-remainder rounding of ``n * proportions``."""
    p = np.asarray(proportions, dtype=np.float64)
    raw = p * n
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    # ties resolved by lower class index
    order = np.lexsort((np.arange(p.size), -(raw - counts)))
    counts[order[:short]] += 1
    if np.any((p > 0) & (counts == 0)):
        raise InvalidArgumentError(f"{n} samples cannot represent every class with proportions {p}")
    return counts


def _simplex_means(spec: DomainShiftSpec, rng: SeededRng) -> np.ndarray:
    # regular simplex in a random subspace: all pairwise distances = separation
    basis, _ = np.linalg.qr(rng.normal(size=(spec.input_dim, spec.num_classes)))
    means = basis.T * (spec.separation / math.sqrt(2.0))
    means = means - means.mean(axis=0)
    # displace the cluster centroid so rotation and scaling about the origin move it
    offset = rng.normal(size=spec.input_dim)
    return means + spec.center_norm * offset / np.linalg.norm(offset)


def _plane_rotation(dim: int, angle: float, rng: SeededRng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    u, v = q[:, 0], q[:, 1]
    return (np.eye(dim) + (math.cos(angle) - 1.0) * (np.outer(u, u) + np.outer(v, v))
            + math.sin(angle) * (np.outer(v, u) - np.outer(u, v)))


def _draw(means, std, counts, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.repeat(np.arange(len(counts)), counts)
    x = means[labels] + std * rng.normal(size=(labels.size, means.shape[1]))
    perm = rng.permutation(labels.size)
    return x[perm], labels[perm]


def domain_geometry(spec: DomainShiftSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(class_means, rotation, shift)`` for a spec."""
    spec.validate()
    root = SeededRng(spec.seed)
    if spec.class_means is not None:
        means = as_matrix(spec.class_means, cols=spec.input_dim, name="class_means")
    else:
        means = _simplex_means(spec, root.spawn(_MEANS))
    trng = root.spawn(_TRANSFORM)
    R = _plane_rotation(spec.input_dim, spec.rotation, trng)
    direction = trng.normal(size=spec.input_dim)
    direction /= np.linalg.norm(direction)
    if spec.shift_span_fraction is not None:
        # fixed share of the shift inside the span of the centred means, where
        # it moves samples across decision boundaries rather than along them
        span, _ = np.linalg.qr((means - means.mean(axis=0)).T)
        span = span[:, :spec.num_classes - 1]
        inside = span @ (span.T @ direction)
        outside = direction - inside
        f = spec.shift_span_fraction
        direction = (f * inside / np.linalg.norm(inside)
                     + math.sqrt(1.0 - f * f) * outside / np.linalg.norm(outside))
    shift = spec.shift_norm * direction
    return means, R, shift


def generate_domains(spec: DomainShiftSpec) -> dict[str, LabeledDataset]:
    """Source/target train and eval splits, keyed ``source_train`` etc."""
    means, R, shift = domain_geometry(spec)
    root = SeededRng(spec.seed)
    out = {}
    for domain, tag in (("source", _SOURCE), ("target", _TARGET)):
        rng = root.spawn(tag)
        p = spec.proportions(domain)
        for split in ("train", "eval"):
            n = getattr(spec, f"n_{domain}_{split}")
            x, y = _draw(means, spec.class_std, class_counts(p, n), rng)
            if domain == "target":
                x = spec.scale * x @ R.T + shift
            out[f"{domain}_{split}"] = LabeledDataset(x, y, split)
    return out


# ---------------------------------------------------------------------------
# source pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    model: Model
    train_accuracy: float
    losses: list[float]
    status: str


def _unit_grad(grad_hat, unit, norms):
    radial = np.einsum("ij,ij->i", grad_hat, unit)
    return (grad_hat - unit * radial[:, None]) / norms[:, None]


def pretrain_source(data: LabeledDataset, sizes, num_classes: int, epochs: int = 30,
                    lr: float = 1e-3, batch_size: int = 64, tau: float = 0.1,
                    seed: int = 0) -> PretrainResult:
    """Supervised cross-entropy training of extractor and cosine classifier.

    The classifier rows are normalized inside the logits, so the saved
    unit-norm prototypes define exactly the trained classifier.
    """
    x = as_matrix(data.inputs, cols=sizes[0], name="source inputs")
    y = np.asarray(data.labels, dtype=np.int64)
    root = SeededRng(seed)
    init = root.spawn(_INIT)
    net = MlpExtractor.initialize(sizes, init)
    W = init.normal(size=(num_classes, sizes[-1]))
    W = l2_normalize_rows(W)[0]
    state = AdamState(lr=lr)
    order = root.spawn(_BATCHES)
    losses = []
    onehot = np.eye(num_classes)
    with threadpool_limits(limits=1, user_api="blas"):
        for _ in range(epochs):
            perm = order.permutation(x.shape[0])
            for s in range(0, x.shape[0], batch_size):
                idx = perm[s:s + batch_size]
                feats, cache = net.forward(x[idx])
                fu, fn = l2_normalize_rows(feats)
                wu, wn = l2_normalize_rows(W)
                p = softmax_rows(fu @ wu.T / tau)
                B = idx.size
                losses.append(float(-np.mean(np.log(p[np.arange(B), y[idx]] + 1e-300))))
                g = (p - onehot[y[idx]]) / (B * tau)
                grads = net.backward(cache, _unit_grad(g @ wu, fu, fn))
                grads["classifier"] = _unit_grad(g.T @ fu, wu, wn)
                params = dict(net.params, classifier=W)
                adam_step(state, params, grads)
                net.mark_updated()
    protos = PrototypeSet(l2_normalize_rows(W)[0], uniform_prior(num_classes), tau)
    model = Model(net, protos)
    acc = float(np.mean(np.argmax(predict_proba(net.features(x), protos), axis=1) == y))
    status = "ok" if acc >= 0.9 else "failed: source train accuracy below 0.90"
    return PretrainResult(model, acc, losses, status)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: Model, data: LabeledDataset) -> dict:
    """Metrics report for a labelled split (stable key order)."""
    C = model.protos.num_classes
    feats = model.features(data.inputs)
    probs = predict_proba(feats, model.protos)
    preds = np.argmax(probs, axis=1)
    y = np.asarray(data.labels, dtype=np.int64)
    cm = confusion_matrix(y, preds, C)
    support = cm.sum(axis=1)
    recall = [float(cm[c, c] / support[c]) if support[c] else None for c in range(C)]
    dices = per_class_dice(y, preds, C)
    present = [c for c in range(C) if support[c]]
    unit = l2_normalize_rows(feats)[0]
    cos_true = np.einsum("ij,ij->i", unit, model.protos.weights[y])
    return {
        "n": int(y.size),
        "accuracy": float(np.mean(preds == y)),
        "per_class_recall": recall,
        "macro_recall": float(np.mean([recall[c] for c in present])),
        "per_class_dice": dices,
        "macro_dice": float(np.mean([dices[c] for c in present])),
        "compactness": float(np.mean(cos_true)),
        "prediction_histogram": np.bincount(preds, minlength=C).tolist(),
        "mean_entropy": float(np.mean(entropy_rows(probs))),
        "confusion_matrix": cm.tolist(),
    }


def reliable_compactness(extractor: MlpExtractor, snapshot: MlpExtractor, protos: PrototypeSet,
                         inputs, alpha=80.0) -> float:
    """Mean cosine between ``extractor`` features and their pseudo-label
    prototype, over samples the snapshot deems reliable (entropy within the
    per-class alpha-percentile threshold)."""
    pred = PredictionBatch.from_probs(predict_proba(snapshot.features(inputs), protos))
    gamma = class_thresholds(pred, alpha)
    reliable = pred.entropies <= gamma[pred.pseudo_labels]
    unit = l2_normalize_rows(extractor.features(np.asarray(inputs)[reliable]))[0]
    return float(np.mean(np.einsum("ij,ij->i", unit, protos.weights[pred.pseudo_labels[reliable]])))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def dataset_csv(data: LabeledDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "label"] + [f"x{j}" for j in range(data.inputs.shape[1])])
    for xi, yi in zip(data.inputs, data.labels):
        w.writerow([data.split, int(yi)] + [format(float(v), ".17g") for v in xi])
    return buf.getvalue()


def write_dataset_csv(data: LabeledDataset, path) -> None:
    Path(path).write_text(dataset_csv(data))


def read_dataset_csv(path) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["split", "label"]:
        raise InvalidArgumentError(f"{path}: expected header 'split,label,x0,...'")
    body = rows[1:]
    if not body:
        raise InvalidArgumentError(f"{path}: no rows")
    x = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    y = np.array([int(r[1]) for r in body], dtype=np.int64)
    return LabeledDataset(x, y, body[0][0])
