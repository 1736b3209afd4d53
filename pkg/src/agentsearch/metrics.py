"""Regression/ranking metrics and the candidate-output grammar.

Four metrics: error rate (relative L1), normalized Gini (two variants),
Spearman rank correlation, RMSE. A metric that has no defined value for the
given vectors raises UndefinedMetricError; callers treat the candidate as
infeasible instead of inventing sentinel numbers.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .core import METRIC_NAMES, MetricVector
from .errors import UndefinedMetricError, UnparseableOutputError

GINI_VARIANTS = ("standard", "paper_literal")


@dataclass(frozen=True)
class LabeledPredictions:
    """Aligned prediction/label vectors, validated once at the boundary."""

    y_hat: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        y_hat = np.asarray(self.y_hat, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y_hat", y_hat)
        object.__setattr__(self, "y", y)
        if y_hat.ndim != 1 or y.ndim != 1:
            raise ValueError("y_hat and y must be one-dimensional")
        if len(y_hat) != len(y):
            raise ValueError(f"length mismatch: {len(y_hat)} predictions vs {len(y)} labels")
        if len(y) == 0:
            raise ValueError("empty vectors")
        if not (np.isfinite(y_hat).all() and np.isfinite(y).all()):
            raise ValueError("vectors must be finite")

    def __len__(self):
        return len(self.y)


def average_ranks(values) -> np.ndarray:
    """1-based ranks, ascending, ties averaged."""
    a = np.asarray(values, dtype=float)
    order = np.argsort(a, kind="stable")
    sorted_vals = a[order]
    ranks = np.empty(len(a), dtype=float)
    i = 0
    n = len(a)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    return ranks


def error_rate(lp: LabeledPredictions) -> float:
    """sum |y_hat - y| / sum |y|; undefined when all labels are zero."""
    denom = float(np.abs(lp.y).sum())
    if denom == 0.0:
        raise UndefinedMetricError("error rate undefined: labels sum to zero magnitude")
    return float(np.abs(lp.y_hat - lp.y).sum() / denom)


def rmse(lp: LabeledPredictions) -> float:
    return float(math.sqrt(np.mean((lp.y_hat - lp.y) ** 2)))


def spearman(lp: LabeledPredictions) -> float:
    """Pearson correlation of average ranks (the tie-correct Spearman).

    Equal to 1 - 6*sum(d^2)/(n(n^2-1)) whenever there are no ties.
    """
    if len(lp) < 2:
        raise UndefinedMetricError("spearman undefined for n < 2")
    r_hat = average_ranks(lp.y_hat)
    r = average_ranks(lp.y)
    d_hat = r_hat - r_hat.mean()
    d = r - r.mean()
    denom = math.sqrt(float(np.dot(d_hat, d_hat)) * float(np.dot(d, d)))
    if denom == 0.0:
        raise UndefinedMetricError("spearman undefined: a vector is constant")
    return float(np.dot(d_hat, d) / denom)


def _gain_weights(scores: np.ndarray) -> np.ndarray:
    """Descending-order position weights (n - pos + 1), averaged over tie groups.

    Ordering labels by descending score and summing cumulative gains is the
    same as weighting each label by its (tie-averaged) positions-from-the-end.
    """
    n = len(scores)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    w = np.empty(n, dtype=float)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # 1-based positions i+1 .. j+1 carry weights n-i .. n-j
        w[order[i : j + 1]] = ((n - i) + (n - j)) / 2.0
        i = j + 1
    return w


def norm_gini(lp: LabeledPredictions, variant: str = "standard") -> float:
    if variant not in GINI_VARIANTS:
        raise ValueError(f"unknown norm_gini variant {variant!r}")
    n = len(lp)
    if variant == "paper_literal":
        if n < 2:
            raise UndefinedMetricError("paper_literal gini undefined for n < 2")
        r_hat = average_ranks(lp.y_hat)
        r = average_ranks(lp.y)
        return float((2.0 * np.dot(r_hat, r) - n * (n + 1)) / (n * (n - 1)))

    # standard: cumulative-gain Gini of labels ordered by prediction, normalized
    # by the same quantity for the perfect ordering. Expressed relative to the
    # random-order baseline so zero/negative label totals stay well defined.
    total = float(lp.y.sum())
    baseline = (n + 1) / 2.0 * total
    s_pred = float(np.dot(_gain_weights(lp.y_hat), lp.y))
    s_perfect = float(np.dot(_gain_weights(lp.y), lp.y))
    denom = s_perfect - baseline
    scale = max(1.0, abs(s_perfect), abs(baseline))
    if abs(denom) <= 1e-12 * scale:
        raise UndefinedMetricError("standard gini undefined: labels carry no ordering signal")
    return float((s_pred - baseline) / denom)


_SCORE_RE = re.compile(
    r"^\s*score\s*=\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$"
)
_METRICS_RE = re.compile(r"^\s*metrics\s*=\s*(\{.*\})\s*$")


def parse_metric_output(stdout_text: str) -> MetricVector:
    """Extract the result lines a candidate must print.

    Grammar: a line `score = <decimal>` (optional) and a line
    `metrics = <single-line JSON object>` with keys er, norm_gini, spearman,
    rmse (required). The last occurrence of each wins. Scientific notation is
    accepted. Anything else on stdout is ignored.
    """
    last_score = None
    last_metrics_raw = None
    for line in stdout_text.splitlines():
        m = _SCORE_RE.match(line)
        if m:
            last_score = float(m.group(1))
            continue
        m = _METRICS_RE.match(line)
        if m:
            last_metrics_raw = m.group(1)
    if last_metrics_raw is None:
        raise UnparseableOutputError(
            "no metrics line found (expected `metrics = {...}` with er/norm_gini/spearman/rmse)"
        )
    try:
        payload = json.loads(last_metrics_raw)
    except ValueError as exc:
        raise UnparseableOutputError(f"metrics line is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise UnparseableOutputError("metrics line must be a JSON object")
    values = {}
    for name in METRIC_NAMES:
        if name not in payload:
            raise UnparseableOutputError(f"metrics line missing key {name!r}")
        v = payload[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise UnparseableOutputError(f"metrics key {name!r} is not a number: {v!r}")
        values[name] = float(v)
    try:
        return MetricVector(scalar_score=last_score, **values)
    except Exception as exc:
        raise UnparseableOutputError(f"metric values out of range: {exc}") from exc
