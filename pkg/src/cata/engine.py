"""Continual unlearning driver and baselines.

``cata`` and ``naive`` rebuild the unlearned model from the pretrained
parameters at every step; ``ga`` (gradient ascent on the current forget set)
and ``ft`` (fine-tuning on the current retain set) update the previous
step's model instead.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .data import Dataset, ForgetSchedule, gen_aux_splits, gen_gaussian_blobs, split_step
from .errors import ConfigError, DataError, DimensionError, FormatError
from .model import (
    BASELINE_DEFAULTS,
    FINETUNE_DEFAULTS,
    PRETRAIN_DEFAULTS,
    TrainConfig,
    evaluate_accuracy,
    param_dim,
    train as train_model,
)
from .paramvec import ParamVector, check_fraction, load_task_vector, save_task_vector
from .report import RunReport, StepRecord, avg_delta, avg_score
from .unlearn import (
    DEFAULT_K,
    DEFAULT_LAMBDA,
    TaskVectorMemory,
    aggregate_cata,
    aggregate_naive,
    apply_update,
    compute_task_vector,
    sparsify,
    task_vector_path,
)

log = logging.getLogger(__name__)

METHODS = ("cata", "naive", "ga", "ft")
ANCHORED_METHODS = ("cata", "naive")


@dataclass(frozen=True)
class UnlearnConfig:
    """``finetune`` builds task vectors; ``baseline`` drives the ga/ft updates."""

    lam: float = DEFAULT_LAMBDA
    k: float = DEFAULT_K
    finetune: TrainConfig = FINETUNE_DEFAULTS
    baseline: TrainConfig = BASELINE_DEFAULTS
    method: str = "cata"

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        check_fraction(self.k)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "k": self.k,
            "method": self.method,
            "finetune": self.finetune.to_dict(),
            "baseline": self.baseline.to_dict(),
        }


def theta_hash(theta: ParamVector) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()


def step_seed(seed: int, t: int) -> int:
    """Training seed for step ``t`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


def pretrain(train: Dataset, cfg: TrainConfig = PRETRAIN_DEFAULTS) -> ParamVector:
    """Train the reference model from all-zero parameters."""
    theta = np.zeros(param_dim(train.num_classes, train.num_features))
    return train_model(theta, train, cfg)


def _pct(x: float) -> float:
    return 100.0 * x


def _evaluate(theta, t, test, schedule_classes, forgotten, aux) -> StepRecord:
    per_class = evaluate_accuracy(theta, test).per_class
    retain = test.without_classes(forgotten)
    return StepRecord(
        t=t,
        theta_hash=theta_hash(theta),
        target_acc={c: _pct(per_class.get(c, 0.0)) for c in schedule_classes},
        retain_acc=_pct(evaluate_accuracy(theta, retain).overall),
        all_acc=_pct(evaluate_accuracy(theta, test).overall),
        aux={name: _pct(evaluate_accuracy(theta, ds).overall) for name, ds in aux.items()},
    )


def _check_inputs(train, test, schedule, theta0, aux):
    d = param_dim(train.num_classes, train.num_features)
    if np.asarray(theta0).shape != (d,):
        raise DimensionError(f"theta0 has dim {np.asarray(theta0).size}, model needs {d}")
    for name, ds in [("test", test), *aux.items()]:
        if ds.num_classes != train.num_classes or ds.num_features != train.num_features:
            raise DataError(f"{name} split does not match the training data shape")
    schedule.validate_for(train.num_classes)
    if schedule.total_steps:
        everything = schedule.cumulative(schedule.total_steps)
        for name, ds in (("train", train), ("test", test)):
            if len(ds.without_classes(everything)) == 0:
                raise DataError(f"schedule leaves an empty retain set in the {name} split")
        for t in range(1, schedule.total_steps + 1):
            if len(train.of_classes(schedule.steps[t - 1])) == 0:
                raise DataError(f"forget set of step {t} has no training samples")


def _load_or_build_task_vector(tv_dir, t, cfg, theta0, forget_train, seed):
    path = task_vector_path(tv_dir, t) if tv_dir is not None else None
    if path is not None and path.exists():
        sv = load_task_vector(path)
        if sv.step_id != t or sv.dim != theta0.size or sv.k_fraction != cfg.k:
            raise FormatError(
                f"{path} (step={sv.step_id} dim={sv.dim} k={sv.k_fraction}) does not match this run"
            )
        log.info("step %d: reloaded task vector from %s", t, path)
        return sv
    ft_cfg = replace(cfg.finetune, seed=step_seed(seed, t))
    theta_f = train_model(theta0, forget_train, ft_cfg)
    sv = sparsify(compute_task_vector(theta0, theta_f, t), cfg.k, t)
    if path is not None:
        save_task_vector(sv, path)
    log.info("step %d: task vector with %d/%d nonzero components", t, sv.nnz, sv.dim)
    return sv


def run_continual(
    train: Dataset,
    test: Dataset,
    schedule: ForgetSchedule,
    cfg: UnlearnConfig,
    theta0: ParamVector,
    *,
    aux: Optional[Mapping[str, Dataset]] = None,
    seed: int = 0,
    taskvec_dir=None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable[[int, ParamVector], None]] = None,
) -> RunReport:
    """Process every forget request of ``schedule`` and evaluate after each step.

    Per-step training seeds are derived from ``seed`` (see :func:`step_seed`);
    the ``seed`` fields inside the ``TrainConfig`` objects are not used.
    With ``taskvec_dir`` (cata/naive only) every sparse task vector is written
    as ``step_<t>.tv``, and files already present are reloaded instead of
    fine-tuning again, which lets an interrupted run resume.
    """
    aux = dict(sorted((aux or {}).items()))
    theta0 = np.asarray(theta0, dtype=np.float64)
    _check_inputs(train, test, schedule, theta0, aux)
    if taskvec_dir is not None:
        if cfg.method not in ANCHORED_METHODS:
            raise ConfigError("task-vector persistence only applies to cata and naive")
        Path(taskvec_dir).mkdir(parents=True, exist_ok=True)
    last = schedule.total_steps if stop_after is None else min(stop_after, schedule.total_steps)
    if last < 0:
        raise ConfigError("stop_after must be >= 0")

    classes = schedule.classes()
    original = _evaluate(theta0, 0, test, classes, schedule.cumulative(last), aux)
    steps = [original]
    memory = TaskVectorMemory(theta0.size)
    theta = theta0.copy()
    at_step: Dict[int, float] = {}
    if on_step is not None:
        on_step(0, theta)

    for t in range(1, last + 1):
        forget_train, _, retain_train = split_step(train, schedule, t)
        if cfg.method in ANCHORED_METHODS:
            sv = _load_or_build_task_vector(taskvec_dir, t, cfg, theta0, forget_train, seed)
            memory = memory.append(sv)
            if cfg.method == "cata":
                tau_agg = aggregate_cata(memory).aggregated
            else:
                tau_agg = aggregate_naive(memory)
            theta = apply_update(theta0, tau_agg, cfg.lam)
        elif cfg.method == "ga":
            theta = train_model(theta, forget_train, replace(cfg.baseline, seed=step_seed(seed, t)), ascent=True)
        else:
            theta = train_model(theta, retain_train, replace(cfg.baseline, seed=step_seed(seed, t)))
        rec = _evaluate(theta, t, test, classes, schedule.cumulative(t), aux)
        steps.append(rec)
        for c in schedule.steps[t - 1]:
            at_step[c] = rec.target_acc[c]
        if on_step is not None:
            on_step(t, theta)
        log.info("step %d: retain %.2f%% all %.2f%%", t, rec.retain_acc, rec.all_acc)

    report = RunReport(
        seed=seed,
        method=cfg.method,
        lam=cfg.lam,
        k=cfg.k,
        schedule=[sorted(s) for s in schedule.steps],
        steps=steps,
        at_step=at_step,
        config={**cfg.to_dict(), "aux": list(aux)},
    )
    if last >= 1:
        report.avg_delta = avg_delta(report)
        report.avg_score = avg_score(report)
    return report


def reconstruct_theta(theta0: ParamVector, memory: TaskVectorMemory, cfg: UnlearnConfig) -> ParamVector:
    """Unlearned parameters implied by ``memory`` alone (anchored methods)."""
    if cfg.method not in ANCHORED_METHODS:
        raise ConfigError("only cata and naive models are a function of the memory")
    if len(memory) == 0:
        return np.array(theta0, dtype=np.float64, copy=True)
    tau = aggregate_cata(memory).aggregated if cfg.method == "cata" else aggregate_naive(memory)
    return apply_update(theta0, tau, cfg.lam)


# --- standard desk-scale scenario -----------------------------------------

@dataclass(frozen=True)
class Scenario:
    train: Dataset
    test: Dataset
    aux: Dict[str, Dataset] = field(default_factory=dict)
    schedule: ForgetSchedule = ForgetSchedule(())
    theta0: Optional[np.ndarray] = None


STANDARD_FORGET = (3, 7, 1, 9, 5)


def standard_scenario(
    seed: int,
    *,
    num_classes: int = 10,
    num_features: int = 16,
    n_train_per_class: int = 200,
    n_test_per_class: int = 50,
    separation: float = 6.0,
    n_aux: int = 2,
    forget=STANDARD_FORGET,
    pretrain_cfg: TrainConfig = PRETRAIN_DEFAULTS,
) -> Scenario:
    """Blob data, held-out auxiliary splits, a one-class-per-step schedule and a pretrained model."""
    train, test = gen_gaussian_blobs(
        num_classes, num_features, n_train_per_class, n_test_per_class, separation, seed
    )
    aux_sets = gen_aux_splits(num_classes, num_features, n_test_per_class, separation, seed, n_aux)
    theta0 = pretrain(train, replace(pretrain_cfg, seed=step_seed(seed, 0)))
    return Scenario(
        train=train,
        test=test,
        aux={f"heldout{i + 1}": ds for i, ds in enumerate(aux_sets)},
        schedule=ForgetSchedule.one_per_step(forget),
        theta0=theta0,
    )
