"""Task-vector construction and conflict-averse aggregation.

Column sums and means over the memory are correctly rounded (computed from
the exact rational value). That makes the sign vote exact (it is zero exactly
when the true sum is zero), makes every aggregate independent of the order in
which requests were stored, and guarantees that the mean of identical values
is that value.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .paramvec import (
    ParamVector,
    SparseTaskVector,
    axpy,
    load_task_vector,
    save_task_vector,
    stack_dense,
    topk_mask,
)

DEFAULT_LAMBDA = 0.7
DEFAULT_K = 0.3


@dataclass(frozen=True)
class TaskVectorMemory:
    """Sparse task vectors stored so far, in request order."""

    dim: int
    vectors: Tuple[SparseTaskVector, ...] = ()

    def __post_init__(self):
        vectors = tuple(self.vectors)
        prev = 0
        for sv in vectors:
            if sv.dim != self.dim:
                raise DimensionError(f"dimension mismatch: {sv.dim} vs {self.dim}")
            if sv.step_id <= prev:
                raise ConfigError("task-vector step ids must be strictly increasing")
            prev = sv.step_id
        object.__setattr__(self, "vectors", vectors)

    def __len__(self) -> int:
        return len(self.vectors)

    def append(self, sv: SparseTaskVector) -> "TaskVectorMemory":
        return TaskVectorMemory(self.dim, self.vectors + (sv,))

    def dense(self) -> np.ndarray:
        return stack_dense(self.vectors, self.dim)


@dataclass(frozen=True, eq=False)
class AggregationResult:
    aggregated: np.ndarray  # tau_agg, float64 (d,)
    sign_vote: np.ndarray  # gamma in {-1, 0, 1}, int8 (d,)
    consistent_counts: np.ndarray  # |A_i|, int64 (d,)


def compute_task_vector(theta0: ParamVector, theta_f: ParamVector, step_id: int = 1) -> ParamVector:
    """Unlearning direction: the negated fine-tuning displacement ``-(theta_f - theta0)``."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta_f = np.asarray(theta_f, dtype=np.float64)
    if theta0.shape != theta_f.shape:
        raise DimensionError(f"dimension mismatch: {theta0.size} vs {theta_f.size}")
    return theta0 - theta_f


def sparsify(tau: ParamVector, k: float = DEFAULT_K, step_id: int = 1) -> SparseTaskVector:
    return topk_mask(tau, k, step_id)


def exact_column_sums(stack: np.ndarray) -> np.ndarray:
    """Correctly rounded sum of each column of ``stack``."""
    sums = stack.sum(axis=0)
    # columns with at most one nonzero are already exact
    multi = np.flatnonzero(np.count_nonzero(stack, axis=0) > 1)
    if multi.size:
        sums[multi] = [math.fsum(col) for col in stack[:, multi].T.tolist()]
    return sums


def exact_column_means(stack: np.ndarray, counts) -> np.ndarray:
    """Correctly rounded ``column sum / count``; 0 where ``count`` is 0."""
    counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), (stack.shape[1],))
    nnz = np.count_nonzero(stack, axis=0)
    out = np.zeros(stack.shape[1], dtype=np.float64)
    # a lone nonzero divided by 1 needs no rational arithmetic
    simple = (counts == 1) & (nnz <= 1)
    out[simple] = stack[:, simple].sum(axis=0)
    for i in np.flatnonzero((counts > 0) & ~simple):
        # every float is num / 2**j exactly; sum over a common power-of-two
        # denominator, then let int / int (correctly rounded) do the division
        ratios = [v.as_integer_ratio() for v in stack[:, i].tolist() if v != 0.0]
        if not ratios:
            continue
        den = max(d for _, d in ratios)
        total = sum(n * (den // d) for n, d in ratios)
        out[i] = total / (den * int(counts[i]))
    return out


def _stack_checked(memory: TaskVectorMemory) -> np.ndarray:
    if len(memory) == 0:
        raise ConfigError("task-vector memory is empty")
    return memory.dense()


def sign_vote(memory: TaskVectorMemory) -> np.ndarray:
    """Per-dimension sign of the summed task vectors (0 where the sum is exactly 0)."""
    return np.sign(exact_column_sums(_stack_checked(memory))).astype(np.int8)


def aggregate_cata(memory: TaskVectorMemory) -> AggregationResult:
    """Average, per dimension, only the nonzero components that agree with the sign vote."""
    stack = _stack_checked(memory)
    gamma = np.sign(exact_column_sums(stack)).astype(np.int8)
    consistent = (stack != 0.0) & (np.sign(stack).astype(np.int8) == gamma)
    counts = consistent.sum(axis=0).astype(np.int64)
    aggregated = exact_column_means(np.where(consistent, stack, 0.0), counts)
    return AggregationResult(aggregated, gamma, counts)


def aggregate_naive(memory: TaskVectorMemory) -> ParamVector:
    """Plain mean of all stored vectors; absent components count as zeros."""
    stack = _stack_checked(memory)
    return exact_column_means(stack, stack.shape[0])


def apply_update(theta0: ParamVector, tau_agg: ParamVector, lam: float = DEFAULT_LAMBDA) -> ParamVector:
    """``theta0 + lam * tau_agg``; always anchored at the pretrained parameters."""
    if not (math.isfinite(lam) and lam >= 0):
        raise ConfigError(f"lambda must be finite and >= 0, got {lam}")
    return axpy(lam, tau_agg, theta0)


# --- persistence -----------------------------------------------------------

_STEP_FILE = re.compile(r"^step_(\d+)\.tv$")


def task_vector_path(directory: os.PathLike | str, step_id: int) -> Path:
    return Path(directory) / f"step_{step_id}.tv"


def save_memory(memory: TaskVectorMemory, directory: os.PathLike | str) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    for sv in memory.vectors:
        save_task_vector(sv, task_vector_path(directory, sv.step_id))


def load_memory(directory: os.PathLike | str, dim: int | None = None) -> TaskVectorMemory:
    """Rebuild the memory from every ``step_<t>.tv`` file in ``directory``."""
    directory = Path(directory)
    found: List[Tuple[int, Path]] = []
    if directory.is_dir():
        for p in directory.iterdir():
            m = _STEP_FILE.match(p.name)
            if m:
                found.append((int(m.group(1)), p))
    found.sort()
    vectors = []
    for step, path in found:
        sv = load_task_vector(path)
        if sv.step_id != step:
            raise FormatError(f"{path.name} declares step {sv.step_id}")
        vectors.append(sv)
    if dim is None:
        if not vectors:
            raise FormatError(f"no task vectors in {directory}; pass dim explicitly")
        dim = vectors[0].dim
    return TaskVectorMemory(dim, tuple(vectors))


def memory_from_dense(vectors: Iterable, k: float = 1.0) -> TaskVectorMemory:
    """Memory from dense rows without masking (step ids 1, 2, ...)."""
    rows = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not rows:
        raise ConfigError("need at least one vector")
    dim = rows[0].size
    return TaskVectorMemory(
        dim, tuple(SparseTaskVector.from_dense(r, step_id=j + 1, k_fraction=k) for j, r in enumerate(rows))
    )
