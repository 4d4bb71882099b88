"""Source-free domain adaptation by prototype-anchored feature alignment
followed by contrastive refinement, with a synthetic domain-shift benchmark.

The hot loss kernels come from a compiled extension when it is available and
from numpy otherwise; see :mod:`protoalign.kernels`.
"""

__version__ = "0.1.0"

from .errors import (DegenerateInputError, InvalidArgumentError, InvalidStateError,  # noqa: E402
                     ProtoAlignError, UndefinedMetricError)
from .prototypes import PrototypeSet, TransportPlan  # noqa: E402
from .pfa import LossResult, p2t_loss, pfa_loss, t2p_loss  # noqa: E402
from .uncertainty import PredictionBatch, UncertaintyPartition, partition  # noqa: E402
from .contrastive import ContrastiveBatch, cl_loss, sample_contrastive_batch  # noqa: E402
from .model import MlpExtractor, Model, load_checkpoint, save_checkpoint  # noqa: E402
from .engine import AdaptationConfig, TrainReport, adapt  # noqa: E402
from .bench import DomainShiftSpec, evaluate, generate_domains, pretrain_source  # noqa: E402
from .config import RunConfig, load_config  # noqa: E402

__all__ = [
    "__version__",
    "ProtoAlignError", "InvalidArgumentError", "DegenerateInputError", "InvalidStateError",
    "UndefinedMetricError",
    "PrototypeSet", "TransportPlan", "LossResult", "t2p_loss", "p2t_loss", "pfa_loss",
    "PredictionBatch", "UncertaintyPartition", "partition",
    "ContrastiveBatch", "cl_loss", "sample_contrastive_batch",
    "MlpExtractor", "Model", "load_checkpoint", "save_checkpoint",
    "AdaptationConfig", "TrainReport", "adapt",
    "DomainShiftSpec", "evaluate", "generate_domains", "pretrain_source",
    "RunConfig", "load_config",
]
