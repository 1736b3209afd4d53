"""Metric implementations against hand values and independent oracles.

The oracles here are deliberately naive (sorting-based ranks, O(n^2) loops)
so they share no code path with the implementation.
"""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from agentsearch.errors import UndefinedMetricError, UnparseableOutputError
from agentsearch.metrics import (
    LabeledPredictions,
    average_ranks,
    error_rate,
    norm_gini,
    parse_metric_output,
    rmse,
    spearman,
)


def lp(y_hat, y):
    return LabeledPredictions(y_hat=np.asarray(y_hat, float), y=np.asarray(y, float))


# ---------------------------------------------------------------- oracles


def oracle_ranks(values):
    """Average ranks by explicit tie grouping, no numpy tricks."""
    n = len(values)
    indexed = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[indexed[j + 1]] == values[indexed[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # 1-based positions i+1 .. j+1
        for k in range(i, j + 1):
            ranks[indexed[k]] = avg
        i = j + 1
    return ranks


def oracle_spearman(y_hat, y):
    """Pearson correlation of average ranks, written as plain loops."""
    r1 = oracle_ranks(list(y_hat))
    r2 = oracle_ranks(list(y))
    n = len(r1)
    m1 = sum(r1) / n
    m2 = sum(r2) / n
    cov = sum((a - m1) * (b - m2) for a, b in zip(r1, r2))
    v1 = sum((a - m1) ** 2 for a in r1)
    v2 = sum((b - m2) ** 2 for b in r2)
    return cov / math.sqrt(v1 * v2)


def oracle_gini_standard(y_hat, y):
    """Cumulative-gain Gini ratio, straight from the definition."""

    def gain(scores):
        order = sorted(range(len(y)), key=lambda i: (-scores[i], i))
        total = sum(y[i] for i in order)
        running = 0.0
        area = 0.0
        for i in order:
            running += y[i]
            area += running
        n = len(y)
        # subtract the diagonal of the random-ordering baseline
        return area / total - (n + 1) / 2.0

    return gain(y_hat) / gain(y)


# ----------------------------------------------------------- frozen values


def test_error_rate_identity_is_zero():
    assert error_rate(lp([3.0, -2.0, 7.0], [3.0, -2.0, 7.0])) == 0.0


def test_error_rate_hand_value():
    # |10-8| + |-5-(-10)| = 7 over |8| + |-10| = 18
    assert error_rate(lp([10.0, -5.0], [8.0, -10.0])) == pytest.approx(7.0 / 18.0, abs=1e-15)


def test_error_rate_zero_labels_is_undefined():
    with pytest.raises(UndefinedMetricError):
        error_rate(lp([1.0, 2.0], [0.0, 0.0]))


def test_rmse_identity_and_hand_values():
    assert rmse(lp([1.0, 2.0], [1.0, 2.0])) == 0.0
    assert rmse(lp([0.0, 0.0], [3.0, -4.0])) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    assert rmse(lp([0.0, 0.0, 0.0], [0.0, 0.0, 30.0])) == pytest.approx(math.sqrt(300.0), abs=1e-12)


def test_spearman_hand_values():
    assert spearman(lp([1.0, 2.0, 3.0], [10.0, 20.0, 30.0])) == pytest.approx(1.0, abs=1e-12)
    assert spearman(lp([1.0, 2.0, 3.0], [3.0, 1.0, 2.0])) == pytest.approx(-0.5, abs=1e-12)
    assert spearman(lp([4.0, 3.0, 2.0, 1.0], [1.0, 2.0, 3.0, 4.0])) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_constant_vector_is_undefined():
    with pytest.raises(UndefinedMetricError):
        spearman(lp([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]))
    with pytest.raises(UndefinedMetricError):
        spearman(lp([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]))


def test_norm_gini_self_is_one():
    y = [12.0, 0.0, 3.0, 44.0, 7.0, 7.0]
    assert norm_gini(lp(y, y)) == pytest.approx(1.0, abs=1e-12)


def test_norm_gini_inverted_is_minus_one():
    assert norm_gini(lp([1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0])) == pytest.approx(-1.0, abs=1e-12)


def test_norm_gini_paper_literal_perfect_three():
    # ranks (1,2,3) on both sides: (2*14 - 12) / 6
    got = norm_gini(lp([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]), variant="paper_literal")
    assert got == pytest.approx(16.0 / 6.0, abs=1e-12)


def test_norm_gini_unknown_variant():
    with pytest.raises(Exception):
        norm_gini(lp([1.0], [1.0]), variant="bogus")


def test_norm_gini_standard_zero_labels_is_undefined():
    with pytest.raises(UndefinedMetricError):
        norm_gini(lp([1.0, 2.0], [0.0, 0.0]))


# ------------------------------------------------------- oracle comparisons


def test_average_ranks_matches_oracle():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(1, 30)
        vals = [rng.choice([0.0, 1.0, 2.5, -3.0, rng.random()]) for _ in range(n)]
        got = average_ranks(vals)
        want = oracle_ranks(vals)
        assert np.allclose(got, want), (vals, got, want)


def test_spearman_matches_pearson_of_ranks_oracle():
    rng = random.Random(23)
    for _ in range(300):
        n = rng.randint(3, 40)
        # coarse value pool so ties happen often
        y_hat = [float(rng.randint(0, 6)) for _ in range(n)]
        y = [float(rng.randint(0, 6)) for _ in range(n)]
        if len(set(y_hat)) < 2 or len(set(y)) < 2:
            continue
        got = spearman(lp(y_hat, y))
        want = oracle_spearman(y_hat, y)
        assert got == pytest.approx(want, abs=1e-9)


def test_norm_gini_standard_matches_cumulative_gain_oracle():
    rng = random.Random(37)
    for _ in range(200):
        n = rng.randint(3, 30)
        y = [float(rng.randint(0, 50)) for _ in range(n)]
        if sum(abs(v) for v in y) == 0 or len(set(y)) < 2:
            continue
        y_hat = [rng.random() * 100 for _ in range(n)]  # no prediction ties
        got = norm_gini(lp(y_hat, y))
        want = oracle_gini_standard(y_hat, y)
        assert got == pytest.approx(want, abs=1e-9)


def test_er_and_rmse_permutation_invariant():
    rng = random.Random(5)
    y_hat = [rng.uniform(-10, 10) for _ in range(20)]
    y = [rng.uniform(-10, 10) for _ in range(20)]
    perm = list(range(20))
    rng.shuffle(perm)
    ph = [y_hat[i] for i in perm]
    py = [y[i] for i in perm]
    assert error_rate(lp(ph, py)) == pytest.approx(error_rate(lp(y_hat, y)), abs=1e-12)
    assert rmse(lp(ph, py)) == pytest.approx(rmse(lp(y_hat, y)), abs=1e-12)


def test_spearman_invariant_under_monotone_transform():
    rng = random.Random(9)
    y_hat = [rng.uniform(0, 5) for _ in range(25)]
    y = [rng.uniform(0, 5) for _ in range(25)]
    warped = [math.exp(v) + v for v in y_hat]  # strictly increasing
    assert spearman(lp(warped, y)) == pytest.approx(spearman(lp(y_hat, y)), abs=1e-12)


def test_norm_gini_invariant_under_prediction_rescaling():
    rng = random.Random(13)
    y = [float(rng.randint(1, 40)) for _ in range(30)]
    y_hat = [rng.random() for _ in range(30)]
    scaled = [3.7 * v for v in y_hat]
    assert norm_gini(lp(scaled, y)) == pytest.approx(norm_gini(lp(y_hat, y)), abs=1e-12)


# ------------------------------------------------------------ output parser


def test_parse_full_output():
    text = 'score = 0.83\nmetrics = {"er":0.7,"norm_gini":0.95,"spearman":0.81,"rmse":120.0}\n'
    mv = parse_metric_output(text)
    assert mv.scalar_score == pytest.approx(0.83)
    assert mv.er == pytest.approx(0.7)
    assert mv.norm_gini == pytest.approx(0.95)
    assert mv.spearman == pytest.approx(0.81)
    assert mv.rmse == pytest.approx(120.0)


def test_parse_last_occurrence_wins():
    text = (
        'metrics = {"er":9.0,"norm_gini":0.0,"spearman":0.0,"rmse":9.0}\n'
        "score = 0.1\n"
        "noise line, not a metric\n"
        'metrics = {"er":0.5,"norm_gini":0.5,"spearman":0.5,"rmse":1.0}\n'
        "score = 0.9\n"
    )
    mv = parse_metric_output(text)
    assert mv.er == pytest.approx(0.5)
    assert mv.scalar_score == pytest.approx(0.9)


def test_parse_noise_tolerated():
    clean = 'metrics = {"er":0.2,"norm_gini":0.8,"spearman":0.6,"rmse":3.0}\n'
    noisy = "warming up...\n[debug] fold 3\n" + clean + "done\n"
    assert parse_metric_output(noisy) == parse_metric_output(clean)


def test_parse_score_only_is_unparseable():
    with pytest.raises(UnparseableOutputError):
        parse_metric_output("score = 1.0\n")


def test_parse_missing_key_is_unparseable():
    with pytest.raises(UnparseableOutputError):
        parse_metric_output('metrics = {"er":0.2,"norm_gini":0.8,"spearman":0.6}\n')


def test_parse_empty_is_unparseable():
    with pytest.raises(UnparseableOutputError):
        parse_metric_output("")


def test_parse_scientific_notation_score():
    text = 'score = 8.3e-1\nmetrics = {"er":1e0,"norm_gini":0.0,"spearman":0.0,"rmse":2.5e1}\n'
    mv = parse_metric_output(text)
    assert mv.scalar_score == pytest.approx(0.83)
    assert mv.rmse == pytest.approx(25.0)


def test_parse_rejects_boolean_metric_values():
    with pytest.raises(UnparseableOutputError):
        parse_metric_output('metrics = {"er":true,"norm_gini":0.8,"spearman":0.6,"rmse":3.0}\n')
