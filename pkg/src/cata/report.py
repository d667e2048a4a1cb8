"""Run reports: per-step accuracies, persistence/fidelity summaries, JSON and CSV output."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .errors import ConfigError, FormatError
from .metrics import average_delta, average_score_from_accuracies

SCHEMA = "cata-report-v1"
FORMATS = ("json", "csv")


@dataclass
class StepRecord:
    t: int
    theta_hash: str
    target_acc: Dict[int, float]
    retain_acc: float
    all_acc: float
    aux: Dict[str, float] = field(default_factory=dict)

    def accuracies(self) -> List[float]:
        return [*self.target_acc.values(), self.retain_acc, self.all_acc, *self.aux.values()]


@dataclass
class RunReport:
    """Outcome of a continual-unlearning run.

    ``steps[0]`` holds the pretrained model's accuracies; its retain accuracy is
    measured on the retain set of the last executed step so that it is the
    right reference for the final step. ``steps[t]`` for ``t >= 1`` measures
    retain accuracy on the complement of the classes forgotten up to ``t``.
    """

    seed: int
    method: str
    lam: float
    k: float
    schedule: List[List[int]]
    steps: List[StepRecord]
    at_step: Dict[int, float] = field(default_factory=dict)
    avg_delta: Optional[float] = None
    avg_score: Optional[float] = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for rec in self.steps:
            for acc in rec.accuracies():
                if not 0.0 <= acc <= 100.0:
                    raise ConfigError(f"accuracy {acc} outside [0, 100] at step {rec.t}")
        if self.avg_delta is not None and self.avg_delta < 0:
            raise ConfigError("avg_delta must be non-negative")

    @property
    def original(self) -> StepRecord:
        return self.steps[0]

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]

    @property
    def num_steps(self) -> int:
        return max(len(self.steps) - 1, 0)


def avg_delta(report: RunReport) -> float:
    """Mean ``|final - at_step|`` accuracy over the classes forgotten so far."""
    if report.num_steps < 1 or not report.at_step:
        raise ConfigError("avg_delta needs at least one unlearning step")
    return average_delta(report.at_step, report.final.target_acc)


def avg_score(report: RunReport) -> float:
    """Average normalized score of the final model against the original.

    Constituents: inverted target score (mean over forgotten classes), retain,
    all, then every auxiliary split in name order.
    """
    if report.num_steps < 1 or not report.at_step:
        raise ConfigError("avg_score needs at least one unlearning step")
    orig, fin = report.original, report.final
    classes = sorted(report.at_step)
    aux_names = sorted(orig.aux)
    return average_score_from_accuracies(
        {c: fin.target_acc[c] for c in classes},
        {c: orig.target_acc[c] for c in classes},
        [fin.retain_acc, fin.all_acc] + [fin.aux[n] for n in aux_names],
        [orig.retain_acc, orig.all_acc] + [orig.aux[n] for n in aux_names],
    )


# --- serialization ---------------------------------------------------------

def report_to_dict(report: RunReport) -> dict:
    return {
        "schema": SCHEMA,
        "seed": report.seed,
        "method": report.method,
        "lambda": report.lam,
        "k": report.k,
        "schedule": report.schedule,
        "steps": [
            {
                "t": s.t,
                "theta_hash": s.theta_hash,
                "target_acc": {str(c): v for c, v in s.target_acc.items()},
                "retain_acc": s.retain_acc,
                "all_acc": s.all_acc,
                "aux": dict(s.aux),
            }
            for s in report.steps
        ],
        "at_step": {str(c): v for c, v in report.at_step.items()},
        "avg_delta": report.avg_delta,
        "avg_score": report.avg_score,
        "config": report.config,
    }


def report_from_dict(doc: dict) -> RunReport:
    if doc.get("schema") != SCHEMA:
        raise FormatError(f"unsupported report schema {doc.get('schema')!r}")
    try:
        steps = [
            StepRecord(
                t=int(s["t"]),
                theta_hash=str(s["theta_hash"]),
                target_acc={int(c): float(v) for c, v in s["target_acc"].items()},
                retain_acc=float(s["retain_acc"]),
                all_acc=float(s["all_acc"]),
                aux={str(n): float(v) for n, v in s.get("aux", {}).items()},
            )
            for s in doc["steps"]
        ]
        return RunReport(
            seed=int(doc["seed"]),
            method=str(doc["method"]),
            lam=float(doc["lambda"]),
            k=float(doc["k"]),
            schedule=[[int(c) for c in step] for step in doc.get("schedule", [])],
            steps=steps,
            at_step={int(c): float(v) for c, v in doc.get("at_step", {}).items()},
            avg_delta=None if doc.get("avg_delta") is None else float(doc["avg_delta"]),
            avg_score=None if doc.get("avg_score") is None else float(doc["avg_score"]),
            config=doc.get("config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed report: {exc!r}") from None


def _csv_columns(report: RunReport):
    classes = [c for step in report.schedule for c in step]
    if not classes and report.steps:
        classes = list(report.steps[0].target_acc)
    aux = list(report.steps[0].aux) if report.steps else []
    return classes, aux


def emit_report(report: RunReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report_to_dict(report), indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        classes, aux = _csv_columns(report)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", *[f"class_{c}" for c in classes], "retain", "all", *[f"aux_{n}" for n in aux]])
        for s in report.steps:
            writer.writerow(
                [s.t, *[repr(s.target_acc[c]) for c in classes], repr(s.retain_acc), repr(s.all_acc),
                 *[repr(s.aux[n]) for n in aux]]
            )
        return buf.getvalue().encode("utf-8")
    raise ConfigError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")


def parse_report(data: bytes | str) -> RunReport:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise FormatError(f"report is not valid JSON: {exc}") from None
    return report_from_dict(doc)
