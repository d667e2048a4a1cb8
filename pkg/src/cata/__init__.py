"""Conflict-averse task arithmetic for continual machine unlearning."""

__version__ = "0.1.0"

from .errors import CataError, ConfigError, ConvergenceError, DataError, DimensionError, FormatError, NonFiniteError
from .paramvec import SparseTaskVector, axpy, densify, topk_mask
from .unlearn import (
    AggregationResult,
    TaskVectorMemory,
    aggregate_cata,
    aggregate_naive,
    apply_update,
    compute_task_vector,
    sign_vote,
    sparsify,
)
from .engine import UnlearnConfig, run_continual
from .metrics import average_delta, average_score, normalized_score

__all__ = [
    "AggregationResult",
    "CataError",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DimensionError",
    "FormatError",
    "NonFiniteError",
    "SparseTaskVector",
    "TaskVectorMemory",
    "UnlearnConfig",
    "aggregate_cata",
    "aggregate_naive",
    "apply_update",
    "average_delta",
    "average_score",
    "axpy",
    "compute_task_vector",
    "densify",
    "normalized_score",
    "run_continual",
    "sign_vote",
    "sparsify",
    "topk_mask",
]
