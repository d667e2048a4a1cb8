"""Forgetting and fidelity metrics. Accuracies are percentages in [0, 100]."""
from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError


def normalized_score(acc_unlearn: float, acc_original: float) -> float:
    """``min(acc_unlearn / acc_original, 1)``; 1 when the original accuracy is 0."""
    if acc_unlearn < 0 or acc_original < 0:
        raise ConfigError("accuracies must be non-negative")
    if acc_original == 0:
        return 1.0
    return min(acc_unlearn / acc_original, 1.0)


def average_score(target_scores: Iterable[float], preserve_scores: Iterable[float]) -> float:
    """Mean of ``100 - mean(target_scores)`` and every preservation score.

    All scores are normalized scores expressed in percent. The target term is
    inverted so that complete forgetting counts as 100.
    """
    target_scores = list(target_scores)
    preserve_scores = list(preserve_scores)
    if not target_scores:
        raise ConfigError("at least one target score is required")
    target = math.fsum(target_scores) / len(target_scores)
    parts = [100.0 - target] + preserve_scores
    return math.fsum(parts) / len(parts)


def average_score_from_accuracies(
    target_final: Mapping[int, float],
    target_original: Mapping[int, float],
    preserve_final: Sequence[float],
    preserve_original: Sequence[float],
) -> float:
    if set(target_final) != set(target_original):
        raise ConfigError("target classes differ between final and original accuracies")
    if len(preserve_final) != len(preserve_original):
        raise ConfigError("preservation sets differ in length")
    targets = [100.0 * normalized_score(target_final[c], target_original[c]) for c in sorted(target_final)]
    preserve = [100.0 * normalized_score(u, o) for u, o in zip(preserve_final, preserve_original)]
    return average_score(targets, preserve)


def average_delta(at_step: Mapping[int, float], final: Mapping[int, float]) -> float:
    """Mean absolute change of each forgotten class between its forgetting step and the end."""
    if not at_step:
        raise ConfigError("no forgotten classes")
    missing = set(at_step) - set(final)
    if missing:
        raise ConfigError(f"no final accuracy for class {min(missing)}")
    return math.fsum(abs(final[c] - at_step[c]) for c in sorted(at_step)) / len(at_step)
