"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when importable.  Set
``PROTOALIGN_BACKEND=python`` to force the fallback, or ``cython`` to make a
missing extension an import error.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType

import numpy as np

_NAMES = {"cython": "._ckernels", "python": "._pykernels"}


def load_backend(name: str) -> ModuleType:
    """Import a backend by name (``"cython"`` or ``"python"``)."""
    if name not in _NAMES:
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(_NAMES[name], __name__)


def available_backends() -> list[str]:
    found = []
    for name in _NAMES:
        try:
            load_backend(name)
        except ImportError:
            continue
        found.append(name)
    return found


def _select() -> tuple[str, ModuleType]:
    wanted = os.environ.get("PROTOALIGN_BACKEND", "auto").lower()
    if wanted in _NAMES:
        return wanted, load_backend(wanted)
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", load_backend("python")


BACKEND, _impl = _select()


# the compiled kernels take C-contiguous memoryviews; coercion is free when
# the input already is one


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pfa_terms(feats, protos, prior, tau):
    """``(t2p, p2t, grad_t2p, grad_p2t)`` for a feature batch."""
    return _impl.pfa_terms(_f64(feats), _f64(protos), _f64(prior), float(tau))


def cl_terms(queries, positives, neg_pool, neg_idx, tau):
    """``(value, grad_queries)`` of the mean InfoNCE term."""
    return _impl.cl_terms(_f64(queries), _f64(positives), _f64(neg_pool),
                          np.ascontiguousarray(neg_idx, dtype=np.int64), float(tau))


def nearest_distances(src, dst):
    """Distance from each row of ``src`` to its nearest row of ``dst``."""
    return _impl.nearest_distances(_f64(src), _f64(dst))


__all__ = ["BACKEND", "available_backends", "load_backend",
           "pfa_terms", "cl_terms", "nearest_distances"]
