"""Out-of-distribution detection metrics plus classification accuracy.

Scores follow one convention everywhere: larger means more
in-distribution.  In-distribution examples are the positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractViolation


@dataclass
class DetectionScoreSet:
    """Per-example scores split into the in-distribution and OOD groups."""

    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        self.in_scores = _check_scores(self.in_scores, "in_scores")
        self.out_scores = _check_scores(self.out_scores, "out_scores")


def _check_scores(values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    if len(v) == 0:
        raise ContractViolation(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return v


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    is_start = np.empty(len(values), dtype=bool)
    is_start[0] = True
    is_start[1:] = sorted_vals[1:] != sorted_vals[:-1]
    starts = np.flatnonzero(is_start)
    counts = np.diff(np.append(starts, len(values)))
    group_rank = starts + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(len(values))
    ranks[order] = np.repeat(group_rank, counts)
    return ranks


def auroc(s: DetectionScoreSet) -> float:
    """Probability that a random in-distribution score beats a random OOD score.

    Rank-based O(n log n) evaluation of the Mann-Whitney statistic; ties
    count one half. Midranks and the rank sum are exact half-integers in
    float64 at these sizes, so the result equals the pairwise definition
    bit for bit.
    """
    n, m = len(s.in_scores), len(s.out_scores)
    pooled = np.concatenate([s.in_scores, s.out_scores])
    ranks = _midranks(pooled)
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def tnr_at_tpr95(s: DetectionScoreSet) -> float:
    """True negative rate at the loosest threshold keeping TPR at or above 0.95.

    An example is classified in-distribution iff its score exceeds the
    threshold. Candidates are the distinct observed scores; if none keeps
    TPR >= 0.95 the threshold falls back to -inf and the TNR is 0.
    """
    n, m = len(s.in_scores), len(s.out_scores)
    in_sorted = np.sort(s.in_scores)
    out_sorted = np.sort(s.out_scores)
    candidates = np.unique(np.concatenate([s.in_scores, s.out_scores]))
    tpr = (n - np.searchsorted(in_sorted, candidates, side="right")) / n
    valid = np.flatnonzero(tpr >= 0.95)
    if len(valid) == 0:
        return 0.0
    threshold = candidates[valid[-1]]
    return float(np.searchsorted(out_sorted, threshold, side="right") / m)


def dtacc(s: DetectionScoreSet) -> float:
    """Best balanced detection accuracy over all thresholds, equal priors.

    Evaluates 1 - min over thresholds of
    0.5 * P_in(score <= t) + 0.5 * P_out(score > t), scanning the
    distinct observed scores; the +/- infinity sentinels both give 0.5,
    so the result never falls below it.
    """
    n, m = len(s.in_scores), len(s.out_scores)
    in_sorted = np.sort(s.in_scores)
    out_sorted = np.sort(s.out_scores)
    candidates = np.unique(np.concatenate([s.in_scores, s.out_scores]))
    in_leq = np.searchsorted(in_sorted, candidates, side="right")
    out_gt = m - np.searchsorted(out_sorted, candidates, side="right")
    risk = 0.5 * (in_leq / n) + 0.5 * (out_gt / m)
    return float(1.0 - min(risk.min(), 0.5))


def classification_accuracy(predictions, targets) -> float:
    """Fraction of exact matches between two equal-length label vectors."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape or predictions.ndim != 1:
        raise ContractViolation(
            f"predictions and targets must be equal-length vectors, got "
            f"{predictions.shape} and {targets.shape}"
        )
    if len(predictions) == 0:
        raise ContractViolation("need at least one prediction")
    return float(np.mean(predictions == targets))
