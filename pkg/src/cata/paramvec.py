"""Dense and sparse parameter-vector arithmetic.

A dense parameter vector is a 1-D ``float64`` numpy array. Sparse task vectors
store only their nonzero masked components together with the step that
produced them.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Union

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NonFiniteError

ParamVector = np.ndarray

TV_MAGIC = "CATA-TV v1"


def as_param_vector(values, *, name: str = "vector") -> ParamVector:
    """Copy ``values`` into a finite 1-D float64 array."""
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return v


def _check_same_dim(x: ParamVector, y: ParamVector) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")


def _finite_or_raise(v: ParamVector, what: str) -> ParamVector:
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{what} produced non-finite values")
    return v


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``alpha * x + y`` as a new vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_dim(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = float(alpha) * x + y
    return _finite_or_raise(out, "axpy")


def negate(x: ParamVector) -> ParamVector:
    return -np.asarray(x, dtype=np.float64)


def retained_count(k: float, dim: int) -> int:
    """Number of components a top-``k`` mask must cover: ``ceil(k * dim)``.

    Uses the exact rational value of ``k`` so that e.g. ``k=0.3, dim=10`` gives
    3 rather than a rounding-induced 4.
    """
    check_fraction(k)
    return max(1, math.ceil(Fraction(k) * dim))


def check_fraction(k: float) -> float:
    if not (isinstance(k, (int, float, np.floating)) and math.isfinite(k)):
        raise ConfigError(f"k must be a real number in (0, 1], got {k!r}")
    if not 0.0 < k <= 1.0:
        raise ConfigError(f"k must lie in (0, 1], got {k}")
    return float(k)


@dataclass(frozen=True, eq=False)
class SparseTaskVector:
    """Masked task vector: nonzero components only, indices ascending."""

    dim: int
    indices: np.ndarray
    values: np.ndarray
    step_id: int = 1
    k_fraction: float = 1.0

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        val = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.dim < 1:
            raise DimensionError(f"dim must be positive, got {self.dim}")
        if idx.shape != val.shape:
            raise DimensionError("indices and values differ in length")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.dim:
                raise DimensionError(f"index out of range for dim {self.dim}")
            if np.any(np.diff(idx) <= 0):
                order = np.argsort(idx, kind="stable")
                idx, val = idx[order], val[order]
                if np.any(np.diff(idx) == 0):
                    raise FormatError("duplicate index in sparse vector")
        if not np.all(np.isfinite(val)):
            raise NonFiniteError("sparse vector holds non-finite values")
        if np.any(val == 0.0):
            raise FormatError("sparse vector must not store explicit zeros")
        if self.step_id < 1:
            raise ConfigError(f"step_id must be positive, got {self.step_id}")
        check_fraction(self.k_fraction)
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "step_id", int(self.step_id))
        object.__setattr__(self, "k_fraction", float(self.k_fraction))

    @property
    def entries(self) -> Dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.dim, dtype=bool)
        m[self.indices] = True
        return m

    def __eq__(self, other):
        if not isinstance(other, SparseTaskVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.step_id == other.step_id
            and self.k_fraction == other.k_fraction
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_dense(cls, v, step_id: int = 1, k_fraction: float = 1.0) -> "SparseTaskVector":
        v = np.asarray(v, dtype=np.float64)
        idx = np.flatnonzero(v)
        return cls(int(v.size), idx, v[idx], step_id, k_fraction)


def topk_mask(v: ParamVector, k: float, step_id: int = 1) -> SparseTaskVector:
    """Keep every component whose magnitude reaches the top-``k`` threshold.

    The threshold is the ``ceil(k*d)``-th largest ``|v_i|`` under the ordering
    (magnitude descending, index ascending). All components tied at the
    threshold are kept, so the result may exceed ``ceil(k*d)`` entries. Zero
    components are never stored.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("topk_mask needs a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("topk_mask input contains non-finite values")
    m = retained_count(k, v.size)
    mag = np.abs(v)
    order = np.argsort(-mag, kind="stable")
    threshold = mag[order[m - 1]]
    keep = (mag >= threshold) & (v != 0.0)
    idx = np.flatnonzero(keep)
    return SparseTaskVector(int(v.size), idx, v[idx], step_id, float(k))


def densify(sv: SparseTaskVector) -> ParamVector:
    out = np.zeros(sv.dim, dtype=np.float64)
    out[sv.indices] = sv.values
    return out


# --- text format -----------------------------------------------------------

def format_task_vector(sv: SparseTaskVector) -> str:
    lines = [TV_MAGIC, f"dim={sv.dim} step={sv.step_id} k={sv.k_fraction!r}"]
    lines.extend(f"{int(i)} {float(v)!r}" for i, v in zip(sv.indices, sv.values))
    return "\n".join(lines) + "\n"


def _parse_header(line: str) -> Dict[str, str]:
    fields = {}
    for tok in line.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise FormatError(f"malformed header token {tok!r}")
        fields[key] = val
    if set(fields) != {"dim", "step", "k"}:
        raise FormatError(f"header must define dim, step and k, got {sorted(fields)}")
    return fields


def parse_task_vector(text: str) -> SparseTaskVector:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty task-vector file")
    if lines[0].strip() != TV_MAGIC:
        raise FormatError(f"unsupported task-vector version line {lines[0]!r}")
    if len(lines) < 2:
        raise FormatError("missing task-vector header line")
    hdr = _parse_header(lines[1])
    try:
        dim, step, k = int(hdr["dim"]), int(hdr["step"]), float(hdr["k"])
    except ValueError as exc:
        raise FormatError(f"bad header values: {exc}") from None
    idx, val = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected '<index> <value>'")
        try:
            idx.append(int(parts[0]))
            val.append(float(parts[1]))
        except ValueError:
            raise FormatError(f"line {lineno}: cannot parse {line!r}") from None
    try:
        return SparseTaskVector(dim, np.array(idx, dtype=np.int64), np.array(val), step, k)
    except (DimensionError, NonFiniteError, ConfigError) as exc:
        raise FormatError(str(exc)) from None


PathLike = Union[str, os.PathLike]


def save_task_vector(sv: SparseTaskVector, path: PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_task_vector(sv))


def load_task_vector(path: PathLike) -> SparseTaskVector:
    with open(path, "r", encoding="ascii") as fh:
        return parse_task_vector(fh.read())


def stack_dense(vectors: Iterable[SparseTaskVector], dim: int) -> np.ndarray:
    """Dense ``(n, dim)`` matrix with one row per sparse vector."""
    vectors = list(vectors)
    out = np.zeros((len(vectors), dim), dtype=np.float64)
    for row, sv in enumerate(vectors):
        if sv.dim != dim:
            raise DimensionError(f"dimension mismatch: {sv.dim} vs {dim}")
        out[row, sv.indices] = sv.values
    return out
