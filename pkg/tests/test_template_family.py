"""The mock candidate family: grid integrity, rendering, moves, landscape."""

from __future__ import annotations

import pytest

from agentsearch.template_family import (
    N_FEATURES,
    REG_LEVELS,
    TRANSFORMS,
    all_params,
    default_params,
    describe_move,
    enumerate_landscape,
    evaluate_params,
    evaluate_source,
    label_for,
    mix_params,
    normalize_params,
    optimum_scalar_score,
    params_from_digest,
    params_key,
    parse_move,
    parse_params,
    perturb,
    possible_moves,
    render_candidate,
)

# Pinned once from a full enumeration of the 279-point grid. The family is
# deliberately frozen (fixed skeleton, fixed synth seed), so any drift here
# means the mock landscape changed and every seeded run result with it.
OPTIMUM_KEY = ((0, 1, 2, 3, 4), "sqrt_signed", 1.0)
OPTIMUM_SCORE = 0.68257599936


def test_grid_size_and_uniqueness():
    grid = all_params()
    assert len(grid) == (2**N_FEATURES - 1) * len(TRANSFORMS) * len(REG_LEVELS) == 279
    keys = {params_key(p) for p in grid}
    assert len(keys) == 279


def test_grid_entries_are_valid():
    for params in all_params():
        p = normalize_params(params)
        assert p["features"] == sorted(set(p["features"]))
        assert p["features"]


def test_normalize_sorts_and_dedupes_features():
    p = normalize_params({"features": [3, 1, 3, 0], "transform": "none", "reg": 0})
    assert p == {"features": [0, 1, 3], "transform": "none", "reg": 0.0}


@pytest.mark.parametrize(
    "params",
    [
        {"features": [], "transform": "none", "reg": 0.0},
        {"features": [5], "transform": "none", "reg": 0.0},
        {"features": [-1], "transform": "none", "reg": 0.0},
        {"features": [0], "transform": "cube", "reg": 0.0},
        {"features": [0], "transform": "none", "reg": 0.5},
    ],
)
def test_normalize_rejects_off_grid_params(params):
    with pytest.raises(ValueError):
        normalize_params(params)


def test_render_parse_roundtrip():
    for params in (default_params(), {"features": [1, 4], "transform": "sqrt_signed", "reg": 1.0}):
        source = render_candidate(params)
        assert parse_params(source) == normalize_params(params)


def test_parse_takes_last_params_line():
    source = render_candidate(default_params())
    source += '\nPARAMS = {"features": [2], "transform": "log_signed", "reg": 1.0}\n'
    assert parse_params(source) == {"features": [2], "transform": "log_signed", "reg": 1.0}


def test_parse_rejects_foreign_source():
    assert parse_params("print('hello')\n") is None
    assert parse_params("PARAMS = {broken json}\n") is None
    assert parse_params('PARAMS = {"features": [], "transform": "none", "reg": 0.0}\n') is None


def test_rendered_candidate_runs_and_reports():
    metrics = evaluate_source(render_candidate(default_params()))
    assert metrics.scalar_score is not None
    assert 0.0 <= metrics.scalar_score <= 1.0
    assert -1.0 <= metrics.spearman <= 1.0
    assert metrics.rmse >= 0.0


def test_evaluation_is_cached_per_grid_point():
    a = evaluate_params(default_params())
    b = evaluate_params(default_params())
    assert a is b


def test_landscape_shape_and_pinned_optimum():
    landscape = enumerate_landscape()
    assert len(landscape) == 279
    best_key = max(landscape, key=lambda k: landscape[k].scalar_score)
    assert best_key == OPTIMUM_KEY
    assert optimum_scalar_score() == pytest.approx(OPTIMUM_SCORE, abs=1e-9)


def test_perturb_moves_stay_on_grid_and_change_params():
    for params in (default_params(), {"features": [0, 2, 4], "transform": "log_signed", "reg": 1.0}):
        base = normalize_params(params)
        for move in possible_moves(base):
            moved = perturb(base, move)
            assert moved == normalize_params(moved)
            assert moved != base, move


def test_perturb_toggles_features_both_ways():
    base = {"features": [0, 2], "transform": "none", "reg": 0.0}
    assert perturb(base, {"kind": "toggle_feature", "feature": 2})["features"] == [0]
    assert perturb(base, {"kind": "toggle_feature", "feature": 1})["features"] == [0, 1, 2]


def test_perturb_never_strands_zero_features():
    base = {"features": [3], "transform": "none", "reg": 0.0}
    moved = perturb(base, {"kind": "toggle_feature", "feature": 3})
    assert moved["features"] == [3]


def test_perturb_ignores_off_grid_moves():
    base = normalize_params(default_params())
    assert perturb(base, {"kind": "set_transform", "transform": "cube"}) == base
    assert perturb(base, {"kind": "set_reg", "reg": 0.37}) == base
    assert perturb(base, {"kind": "repaint"}) == base


def test_possible_moves_counts():
    # A single-feature subset loses its own toggle; everything else keeps
    # all five toggles plus two transform and two reg alternatives.
    assert len(possible_moves({"features": [0], "transform": "none", "reg": 0.0})) == 8
    assert len(possible_moves({"features": [0, 1], "transform": "none", "reg": 0.0})) == 9


def test_move_descriptions_roundtrip():
    for params in all_params()[::37]:
        for move in possible_moves(params):
            assert parse_move(describe_move(move)) == move


def test_parse_move_rejects_prose():
    assert parse_move("try a neural network instead") is None
    assert parse_move("Set the ridge regularization strength to ...") is None


def test_mix_params_selector_extremes():
    a = {"features": [0, 1], "transform": "log_signed", "reg": 0.1}
    b = {"features": [2, 3], "transform": "sqrt_signed", "reg": 1.0}
    assert mix_params(a, b, selector=0b1111111) == normalize_params(a)
    assert mix_params(a, b, selector=0) == normalize_params(b)


def test_mix_params_blends_coordinates():
    a = {"features": [0, 1], "transform": "log_signed", "reg": 0.1}
    b = {"features": [2, 3], "transform": "sqrt_signed", "reg": 1.0}
    # feature bits 0-4 from a, transform bit from a, reg bit from b
    mixed = mix_params(a, b, selector=0b0111111)
    assert mixed == {"features": [0, 1], "transform": "log_signed", "reg": 1.0}


def test_mix_params_falls_back_when_selection_is_empty():
    a = {"features": [0], "transform": "none", "reg": 0.0}
    b = {"features": [1], "transform": "none", "reg": 0.0}
    # bit 0 picks b (0 not in b), bit 1 picks a (1 not in a): empty -> a's set
    mixed = mix_params(a, b, selector=0b0000010)
    assert mixed["features"] == [0]


def test_params_from_digest_wraps_the_grid():
    grid = all_params()
    assert params_from_digest(0) == grid[0]
    assert params_from_digest(279) == grid[0]
    assert params_from_digest(12345) == grid[12345 % 279]
    assert normalize_params(params_from_digest(987654321)) in [normalize_params(p) for p in grid]


def test_label_for_is_readable_and_stable():
    label = label_for({"features": [0, 1, 3], "transform": "log_signed", "reg": 0.1})
    assert label == "ridge_f013_log_signed_reg0p1"
    assert label_for(default_params()) == "ridge_f0_none_reg0p1"
