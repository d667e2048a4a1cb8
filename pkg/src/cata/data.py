"""Datasets, forget schedules, and the synthetic Gaussian-blob generator.

Random draws use numpy's ``PCG64`` bit generator seeded through
``numpy.random.SeedSequence(seed)``; class means, the training split, the test
split and any auxiliary splits each come from their own spawned child stream
(children 0, 1, 2 and 3+i respectively), so adding auxiliary splits never
changes train or test data.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # (N, F) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError("features and labels differ in length")
        if self.num_classes < 1:
            raise DataError("num_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"label out of range [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def per_class_index(self) -> Dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in range(self.num_classes)}

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions)
        return Dataset(self.features[positions], self.labels[positions], self.num_classes)

    def of_classes(self, classes: Iterable[int]) -> "Dataset":
        return self.subset(np.isin(self.labels, sorted(classes)))

    def without_classes(self, classes: Iterable[int]) -> "Dataset":
        return self.subset(~np.isin(self.labels, sorted(classes)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class ForgetSchedule:
    """Ordered forget requests; step ``t`` (1-based) removes ``steps[t-1]``."""

    steps: Tuple[frozenset, ...]

    def __post_init__(self):
        steps = tuple(frozenset(int(c) for c in s) for s in self.steps)
        seen = set()
        for t, s in enumerate(steps, start=1):
            if not s:
                raise ConfigError(f"forget step {t} is empty")
            if min(s) < 0:
                raise ConfigError(f"forget step {t} has a negative class id")
            dup = seen & s
            if dup:
                raise ConfigError(f"class {min(dup)} is scheduled more than once")
            seen |= s
        object.__setattr__(self, "steps", steps)

    @classmethod
    def one_per_step(cls, classes: Sequence[int]) -> "ForgetSchedule":
        return cls(tuple(frozenset([c]) for c in classes))

    @classmethod
    def parse(cls, text: str) -> "ForgetSchedule":
        """Parse ``"3,7,1"`` (one class per step) or ``"3+4,7"`` (grouped)."""
        text = text.strip()
        if not text:
            return cls(())
        try:
            return cls(tuple(frozenset(int(c) for c in part.split("+")) for part in text.split(",")))
        except ValueError:
            raise ConfigError(f"cannot parse forget schedule {text!r}") from None

    @property
    def total_steps(self) -> int:
        return len(self.steps)

    def classes(self) -> List[int]:
        """Every scheduled class, in step order (ascending within a step)."""
        return [c for s in self.steps for c in sorted(s)]

    def cumulative(self, t: int) -> frozenset:
        return frozenset().union(*self.steps[:t])

    def validate_for(self, num_classes: int) -> None:
        bad = [c for c in self.classes() if c >= num_classes]
        if bad:
            raise ConfigError(f"schedule references unknown class {bad[0]} (dataset has {num_classes})")

    def __str__(self) -> str:
        return ",".join("+".join(str(c) for c in sorted(s)) for s in self.steps)


def split_step(dataset: Dataset, schedule: ForgetSchedule, t: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Return ``(forget_t, cumulative_forget, retain)`` for step ``t``."""
    if not 1 <= t <= schedule.total_steps:
        raise ConfigError(f"step {t} outside 1..{schedule.total_steps}")
    schedule.validate_for(dataset.num_classes)
    cumulative = schedule.cumulative(t)
    return (
        dataset.of_classes(schedule.steps[t - 1]),
        dataset.of_classes(cumulative),
        dataset.without_classes(cumulative),
    )


# --- synthetic data --------------------------------------------------------

def _check_blob_args(C, F, n_per_class, separation):
    if C < 2 or F < 2:
        raise ConfigError(f"need at least 2 classes and 2 features, got C={C}, F={F}")
    if any(n < 1 for n in n_per_class):
        raise ConfigError("per-class sample counts must be >= 1")
    if not (math.isfinite(separation) and separation >= 0):
        raise ConfigError(f"separation must be finite and >= 0, got {separation}")


def _class_means(C: int, F: int, separation: float, stream: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(stream))
    directions = rng.standard_normal((C, F))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions


def _draw(means: np.ndarray, n_per_class: int, stream: np.random.SeedSequence) -> Dataset:
    rng = np.random.Generator(np.random.PCG64(stream))
    C, F = means.shape
    X = np.concatenate([means[c] + rng.standard_normal((n_per_class, F)) for c in range(C)])
    y = np.repeat(np.arange(C), n_per_class)
    return Dataset(X, y, C)


def gen_gaussian_blobs(
    C: int,
    F: int,
    n_train_per_class: int,
    n_test_per_class: int,
    separation: float,
    seed: int,
) -> Tuple[Dataset, Dataset]:
    """Isotropic unit-variance blobs whose means lie on a sphere of radius ``separation``.

    Samples are stored class by class, so class priors are exactly uniform.
    """
    _check_blob_args(C, F, (n_train_per_class, n_test_per_class), separation)
    means_ss, train_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    means = _class_means(C, F, separation, means_ss)
    return _draw(means, n_train_per_class, train_ss), _draw(means, n_test_per_class, test_ss)


def gen_aux_splits(
    C: int,
    F: int,
    n_per_class: int,
    separation: float,
    seed: int,
    count: int,
) -> List[Dataset]:
    """Extra held-out splits from the same class means as :func:`gen_gaussian_blobs`."""
    _check_blob_args(C, F, (n_per_class,), separation)
    if count < 0:
        raise ConfigError("aux split count must be >= 0")
    children = np.random.SeedSequence(seed).spawn(3 + count)
    means = _class_means(C, F, separation, children[0])
    return [_draw(means, n_per_class, children[3 + i]) for i in range(count)]


# --- CSV -------------------------------------------------------------------

def load_csv(path: os.PathLike | str) -> Dataset:
    """Read ``f0,...,f{F-1},label`` rows; the class count is ``1 + max label``."""
    if not os.path.isfile(path):
        raise DataError(f"no such data file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset (no header)") from None
        header = [h.strip() for h in header]
        num_features = len(header) - 1
        expected = [f"f{i}" for i in range(num_features)] + ["label"]
        if num_features < 1 or header != expected:
            raise DataError(f"{path}: line 1: header must be f0,...,f{{F-1}},label")
        rows, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != num_features + 1:
                raise DataError(
                    f"{path}: line {lineno}: expected {num_features + 1} columns, got {len(row)}"
                )
            try:
                feats = [float(cell) for cell in row[:-1]]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in feats):
                raise DataError(f"{path}: line {lineno}: non-finite feature")
            label_text = row[-1].strip()
            try:
                label = int(label_text)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer label {label_text!r}") from None
            if label < 0:
                raise DataError(f"{path}: line {lineno}: negative label")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64), max(labels) + 1)


def format_csv(dataset: Dataset) -> str:
    header = ",".join([f"f{i}" for i in range(dataset.num_features)] + ["label"])
    lines = [header]
    for x, y in zip(dataset.features, dataset.labels):
        lines.append(",".join(repr(float(v)) for v in x) + f",{int(y)}")
    return "\n".join(lines) + "\n"


def save_csv(dataset: Dataset, path: os.PathLike | str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_csv(dataset))
