"""MLP feature extractor with exact reverse-mode gradients, and the text
checkpoint format shared by every command."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .linalg import SeededRng, as_matrix
from .prototypes import PrototypeSet

__all__ = ["MlpExtractor", "ForwardCache", "Model", "save_checkpoint", "load_checkpoint",
           "CHECKPOINT_HEADER", "LEAKY_SLOPE"]

LEAKY_SLOPE = 0.01
CHECKPOINT_HEADER = "protoalign-ckpt v1"

_versions = itertools.count(1)


@dataclass(frozen=True)
class ForwardCache:
    inputs: np.ndarray
    preacts: tuple[np.ndarray, ...]
    acts: tuple[np.ndarray, ...]
    version: int


class MlpExtractor:
    """Fully connected extractor: leaky-ReLU hidden layers, linear output.

    Parameters live in ``params`` as ``extractor.W{l}`` (fan_in x fan_out)
    and ``extractor.b{l}``.  Any in-place update must go through
    :meth:`mark_updated` so outstanding caches are invalidated.
    """

    def __init__(self, sizes, params: dict[str, np.ndarray] | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise InvalidArgumentError(f"invalid layer sizes {sizes}")
        if params is None:
            params = {}
            for l, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                params[f"extractor.W{l}"] = np.zeros((a, b))
                params[f"extractor.b{l}"] = np.zeros(b)
        self.params = params
        self._check_params()
        self.version = next(_versions)
        self.frozen = False

    @classmethod
    def initialize(cls, sizes, rng: SeededRng) -> "MlpExtractor":
        """He-normal weights, zero biases."""
        net = cls(sizes)
        for l, (a, b) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            net.params[f"extractor.W{l}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        net.mark_updated()
        return net

    def _check_params(self) -> None:
        for l, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W, bias = self.params.get(f"extractor.W{l}"), self.params.get(f"extractor.b{l}")
            if W is None or bias is None or W.shape != (a, b) or bias.shape != (b,):
                raise InvalidArgumentError(f"layer {l} parameters do not match sizes {self.sizes}")

    @property
    def num_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def param_names(self) -> list[str]:
        names = []
        for l in range(self.num_layers):
            names += [f"extractor.W{l}", f"extractor.b{l}"]
        return names

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def mark_updated(self) -> None:
        if self.frozen:
            raise InvalidStateError("extractor is frozen")
        self.version = next(_versions)

    def snapshot(self) -> "MlpExtractor":
        """Read-only deep copy."""
        snap = self.copy()
        for p in snap.params.values():
            p.setflags(write=False)
        snap.frozen = True
        return snap

    def copy(self) -> "MlpExtractor":
        return MlpExtractor(self.sizes, {k: np.array(v) for k, v in self.params.items()})

    def forward(self, inputs) -> tuple[np.ndarray, ForwardCache]:
        x = as_matrix(inputs, name="inputs")
        if x.shape[1] != self.input_dim:
            raise InvalidArgumentError(f"input width {x.shape[1]} != {self.input_dim}")
        preacts, acts = [], []
        h = x
        for l in range(self.num_layers):
            z = h @ self.params[f"extractor.W{l}"] + self.params[f"extractor.b{l}"]
            preacts.append(z)
            h = np.where(z > 0, z, LEAKY_SLOPE * z) if l < self.num_layers - 1 else z
            acts.append(h)
        return h, ForwardCache(x, tuple(preacts), tuple(acts), self.version)

    def features(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]

    def backward(self, cache: ForwardCache, grad_features) -> dict[str, np.ndarray]:
        if cache.version != self.version:
            raise InvalidStateError("forward cache is stale: parameters changed since forward")
        g = np.asarray(grad_features, dtype=np.float64)
        if g.shape != cache.acts[-1].shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} != features {cache.acts[-1].shape}")
        grads = {}
        for l in reversed(range(self.num_layers)):
            if l < self.num_layers - 1:
                g = np.where(cache.preacts[l] > 0, g, LEAKY_SLOPE * g)
            below = cache.acts[l - 1] if l > 0 else cache.inputs
            grads[f"extractor.W{l}"] = below.T @ g
            grads[f"extractor.b{l}"] = g.sum(axis=0)
            if l > 0:
                g = g @ self.params[f"extractor.W{l}"].T
        return grads

    def fingerprint(self) -> bytes:
        return b"".join(self.params[k].tobytes() for k in self.param_names())


@dataclass
class Model:
    """Extractor plus its frozen classifier."""

    extractor: MlpExtractor
    protos: PrototypeSet

    def features(self, inputs) -> np.ndarray:
        return self.extractor.features(inputs)

    def copy(self) -> "Model":
        return Model(self.extractor.copy(), self.protos)


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(values).ravel())


def _tensor_line(name: str, arr: np.ndarray) -> str:
    shape = "x".join(str(s) for s in np.asarray(arr).shape) or "1"
    return f"{name} {shape} {_fmt(arr)}"


def dumps_checkpoint(model: Model) -> str:
    ex = model.extractor
    lines = [CHECKPOINT_HEADER, "layers " + " ".join(str(s) for s in ex.sizes)]
    lines += [_tensor_line(k, ex.params[k]) for k in ex.param_names()]
    lines.append(_tensor_line("classifier.weights", model.protos.weights))
    lines.append(_tensor_line("classifier.prior", model.protos.prior))
    lines.append(_tensor_line("classifier.temperature", np.array([model.protos.temperature])))
    return "\n".join(lines) + "\n"


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_text(dumps_checkpoint(model))


def loads_checkpoint(text: str) -> Model:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise InvalidArgumentError("not a protoalign checkpoint (bad header)")
    head = lines[1].split()
    if head[0] != "layers":
        raise InvalidArgumentError("checkpoint is missing the layer-size line")
    sizes = [int(s) for s in head[1:]]
    tensors = {}
    for ln in lines[2:]:
        name, shape, *vals = ln.split()
        dims = tuple(int(s) for s in shape.split("x"))
        arr = np.array([float(v) for v in vals], dtype=np.float64)
        if arr.size != int(np.prod(dims)):
            raise InvalidArgumentError(f"tensor {name}: {arr.size} values for shape {shape}")
        if name in tensors:
            raise InvalidArgumentError(f"duplicate tensor {name}")
        tensors[name] = arr.reshape(dims)
    params = {}
    for l in range(len(sizes) - 1):
        for key in (f"extractor.W{l}", f"extractor.b{l}"):
            if key not in tensors:
                raise InvalidArgumentError(f"checkpoint is missing {key}")
            params[key] = tensors.pop(key)
        params[f"extractor.b{l}"] = params[f"extractor.b{l}"].reshape(-1)
    try:
        weights = tensors.pop("classifier.weights")
        prior = tensors.pop("classifier.prior").reshape(-1)
        tau = float(tensors.pop("classifier.temperature").ravel()[0])
    except KeyError as exc:
        raise InvalidArgumentError(f"checkpoint is missing {exc.args[0]}") from None
    if tensors:
        raise InvalidArgumentError(f"unknown tensors in checkpoint: {sorted(tensors)}")
    return Model(MlpExtractor(sizes, params), PrototypeSet(weights, prior, tau))


def load_checkpoint(path) -> Model:
    return loads_checkpoint(Path(path).read_text())
