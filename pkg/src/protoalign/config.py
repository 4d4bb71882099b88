"""Flat ``key = value`` run configuration shared by every command.

Every key has a documented default (see :data:`KEYS` or
``protoalign show-config``); unknown keys are rejected.  Lines may carry
``#`` comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .bench import DomainShiftSpec
from .engine import AdaptationConfig
from .errors import InvalidArgumentError

__all__ = ["Key", "KEYS", "RunConfig", "parse_config", "load_config", "builtin_config", "format_value",
           "BUILTIN_CONFIGS"]

BUILTIN_CONFIGS = ("s1", "s2", "em_recovery")


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    doc: str
    choices: tuple[str, ...] = ()


KEYS: tuple[Key, ...] = (
    # synthetic domains
    Key("seed", "int", 0, "seed for data generation, pretraining and adaptation"),
    Key("num_classes", "int", 4, "number of classes C"),
    Key("input_dim", "int", 8, "input dimension D_in"),
    Key("class_std", "float", 0.3, "per-coordinate std of every class cluster"),
    Key("separation", "float", 1.2, "pairwise distance between class means"),
    Key("source_proportions", "floats?", None, "source class proportions (none = uniform)"),
    Key("target_proportions", "floats?", None, "target class proportions (none = uniform)"),
    Key("rotation", "float", math.pi / 6, "target rotation angle in radians, in a random plane"),
    Key("scale", "float", 1.3, "target scale factor"),
    Key("shift_norm", "float", 1.0, "norm of the target translation"),
    Key("center_norm", "float", 0.0, "distance of the class-mean centroid from the origin"),
    Key("shift_span_fraction", "float?", None,
        "fraction of the shift inside the class-mean span (none = random direction)"),
    Key("n_source_train", "int", 2000, "source training samples"),
    Key("n_source_eval", "int", 1000, "source evaluation samples"),
    Key("n_target_train", "int", 2000, "unlabelled target samples used for adaptation"),
    Key("n_target_eval", "int", 1000, "labelled target samples used for evaluation"),
    # model and pretraining
    Key("extractor_sizes", "ints", (64, 64, 16),
        "hidden and feature widths after the input layer; the last is D_f"),
    Key("pretrain_epochs", "int", 30, "source pretraining epochs"),
    Key("pretrain_lr", "float", 1e-3, "source pretraining Adam learning rate"),
    Key("pretrain_batch_size", "int", 64, "source pretraining batch size"),
    # adaptation
    Key("tau", "float", 0.1, "temperature of the classifier, transport plan and contrastive loss"),
    Key("batch_size", "int", 16, "alignment-stage batch size"),
    Key("cl_batch_size", "int?", None, "contrastive-stage batch size (none = batch_size)"),
    Key("lr", "float", 1e-4, "adaptation Adam learning rate"),
    Key("weight_decay", "float", 5e-4, "decoupled weight decay"),
    Key("pfa_iters", "int", 200, "alignment-stage iterations"),
    Key("cl_iters", "int", 400, "contrastive-stage iterations"),
    Key("alpha", "floats", (80.0,), "entropy percentile for reliability, one value or one per class"),
    Key("K", "int", 64, "queries sampled per class"),
    Key("N", "int", 256, "negatives sampled per query"),
    Key("rank_threshold", "int", 3, "minimum category-order rank of a negative for its class"),
    Key("em_momentum", "float", 0.9, "EMA momentum of the running class prior (1 = frozen)"),
    Key("negatives_threshold_mode", "choice", "pseudo_label",
        "which class threshold decides unreliability of a negative",
        ("pseudo_label", "target_class")),
    Key("cl_keep_pfa_loss", "bool", False, "also optimize the alignment loss during the contrastive stage"),
    Key("pfa_mode", "choice", "both", "alignment terms to optimize (ablation switch)",
        ("both", "t2p", "p2t")),
    # files
    Key("data_dir", "str", "data", "default dataset directory"),
    Key("out_dir", "str", "out", "default output directory"),
)

_BY_NAME = {k.name: k for k in KEYS}

_DOMAIN_KEYS = ("num_classes", "input_dim", "class_std", "separation", "source_proportions",
                "target_proportions", "rotation", "scale", "shift_norm", "center_norm",
                "shift_span_fraction", "n_source_train", "n_source_eval", "n_target_train",
                "n_target_eval", "seed")
_ADAPT_KEYS = ("tau", "batch_size", "cl_batch_size", "lr", "weight_decay", "pfa_iters", "cl_iters",
               "alpha", "K", "N", "rank_threshold", "em_momentum", "seed",
               "negatives_threshold_mode", "cl_keep_pfa_loss", "pfa_mode")


def _none(raw: str) -> bool:
    return raw.lower() in ("none", "null", "")


def _parse_value(key: Key, raw: str):
    raw = raw.strip()
    kind = key.kind
    try:
        if kind.endswith("?"):
            if _none(raw):
                return None
            kind = kind[:-1]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        if kind == "ints":
            return tuple(int(v) for v in raw.split(","))
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "choice":
            if raw not in key.choices:
                raise ValueError(raw)
            return raw
        return raw
    except ValueError:
        extra = f" (one of {', '.join(key.choices)})" if key.choices else ""
        raise InvalidArgumentError(f"bad value for {key.name}: {raw!r}{extra}") from None


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    return str(value)


class RunConfig:
    """Resolved configuration: every key present, defaults filled in."""

    def __init__(self, values: dict | None = None):
        self.values = {k.name: k.default for k in KEYS}
        for name, value in (values or {}).items():
            if name not in _BY_NAME:
                raise InvalidArgumentError(f"unknown config key {name!r}")
            self.values[name] = value

    def __getitem__(self, name: str):
        return self.values[name]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def with_overrides(self, **values) -> "RunConfig":
        merged = dict(self.values)
        merged.update({k: v for k, v in values.items() if v is not None})
        return RunConfig(merged)

    def domain_spec(self) -> DomainShiftSpec:
        kw = {k: self.values[k] for k in _DOMAIN_KEYS}
        return DomainShiftSpec(**kw).validate()

    def adaptation_config(self) -> AdaptationConfig:
        kw = {k: self.values[k] for k in _ADAPT_KEYS}
        alpha = kw["alpha"]
        kw["alpha"] = alpha[0] if len(alpha) == 1 else tuple(alpha)
        return AdaptationConfig(**kw).validate(self.values["num_classes"])

    def extractor_sizes(self) -> list[int]:
        return [self.values["input_dim"], *self.values["extractor_sizes"]]

    def to_dict(self) -> dict:
        """JSON-ready view, in key order."""
        return {k.name: list(v) if isinstance(v := self.values[k.name], tuple) else v for k in KEYS}

    def dumps(self) -> str:
        return "".join(f"{k.name} = {format_value(self.values[k.name])}\n" for k in KEYS)


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"line {lineno}: expected 'key = value'")
        name, raw = (s.strip() for s in line.split("=", 1))
        if name not in _BY_NAME:
            raise InvalidArgumentError(f"line {lineno}: unknown config key {name!r}")
        if name in values:
            raise InvalidArgumentError(f"line {lineno}: duplicate key {name!r}")
        values[name] = _parse_value(_BY_NAME[name], raw)
    return RunConfig(values)


def builtin_config(name: str) -> RunConfig:
    if name not in BUILTIN_CONFIGS:
        raise InvalidArgumentError(f"no built-in config {name!r}; have {', '.join(BUILTIN_CONFIGS)}")
    return parse_config(resources.files("protoalign.configs").joinpath(f"{name}.cfg").read_text())


def load_config(path_or_name) -> RunConfig:
    """Read a config file; a bare built-in name (``s1``, ``s2``, ...) loads
    the shipped scenario."""
    if path_or_name is None:
        return RunConfig()
    if str(path_or_name) in BUILTIN_CONFIGS and not Path(path_or_name).exists():
        return builtin_config(str(path_or_name))
    try:
        text = Path(path_or_name).read_text()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config {path_or_name}: {exc.strerror}") from None
    return parse_config(text)
