"""Parametric family of executable candidate pipelines for the mock backend.

Every mock-generated candidate is a rendering of one stdlib-only skeleton over
a small discrete grid: which features enter the model, how they are
transformed, and how hard the ridge fit is regularized. The family is tiny on
purpose: 31 masks x 3 transforms x 3 ridge levels = 279 programs, so the whole
landscape can be enumerated in-process and the true optimum is known exactly.

Rendered programs are self-contained: with TRAIN_PATH/TEST_PATH set they read
CSV splits (harness datasets), otherwise they synthesize a fixed-seed internal
dataset, which keeps the mock landscape constant across runs and hosts.
"""
from __future__ import annotations

import contextlib
import io
import json
import re
from functools import lru_cache

from .core import MetricVector
from .errors import UnparseableOutputError
from .metrics import parse_metric_output

N_FEATURES = 5
TRANSFORMS = ("none", "log_signed", "sqrt_signed")
REG_LEVELS = (0.0, 0.1, 1.0)

PARAMS_RE = re.compile(r"^PARAMS = (\{.*\})\s*$", re.MULTILINE)

SKELETON = '''"""Customer LTV pipeline: ridge regression on a transformed feature subset.

Reads TRAIN_PATH/TEST_PATH CSV splits when provided, otherwise evaluates on a
built-in deterministic dataset. Prints the result contract lines on stdout.
"""
import json
import math
import os
import random

PARAMS = %(params)s

ER_CAP = 1.5
RMSE_CAP = 40.0
N_ROWS = 200
DATA_SEED = 7151


def synth_rows(n, seed):
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        z = [rng.gauss(0.0, 1.0) for _ in range(5)]
        x = [math.exp((2.0 if j >= 3 else 0.9) * z[j]) for j in range(5)]
        signal = 1.5 * z[0] - 1.1 * z[1] + 0.8 * z[2] + 0.6 * z[0] * z[1]
        u = rng.random()
        if u < 0.12:
            y = 0.0
        elif u < 0.28:
            y = -abs(rng.gauss(2.0, 1.5))
        else:
            y = 8.0 * math.exp(0.55 * signal + rng.gauss(0.0, 0.45))
        rows.append((x, y))
    return rows


def read_csv(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        feat_idx = [i for i, name in enumerate(header) if name != "ltv"]
        y_idx = header.index("ltv")
        for line in fh:
            parts = line.rstrip("\\n").split(",")
            rows.append(([float(parts[i]) for i in feat_idx], float(parts[y_idx])))
    return rows


def load_data():
    train_path = os.environ.get("TRAIN_PATH")
    if train_path:
        return read_csv(train_path), read_csv(os.environ["TEST_PATH"])
    rows = synth_rows(N_ROWS, DATA_SEED)
    cut = (len(rows) * 7) // 10
    return rows[:cut], rows[cut:]


def transform_value(v):
    kind = PARAMS["transform"]
    if kind == "log_signed":
        return math.copysign(math.log1p(abs(v)), v)
    if kind == "sqrt_signed":
        return math.copysign(math.sqrt(abs(v)), v)
    return v


def design_row(x):
    return [1.0] + [transform_value(x[j]) for j in PARAMS["features"] if j < len(x)]


def fit_ridge(rows, lam):
    xs = [design_row(x) for x, _ in rows]
    ys = [y for _, y in rows]
    k = len(xs[0])
    gram = [[lam if (i == j and i > 0) else 0.0 for j in range(k)] for i in range(k)]
    rhs = [0.0] * k
    for row, target in zip(xs, ys):
        for i in range(k):
            rhs[i] += row[i] * target
            gi = gram[i]
            ri = row[i]
            for j in range(k):
                gi[j] += ri * row[j]
    for col in range(k):
        piv = max(range(col, k), key=lambda r: abs(gram[r][col]))
        if abs(gram[piv][col]) < 1e-12:
            continue
        gram[col], gram[piv] = gram[piv], gram[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        inv = 1.0 / gram[col][col]
        for r in range(col + 1, k):
            f = gram[r][col] * inv
            if f:
                rhs[r] -= f * rhs[col]
                for c in range(col, k):
                    gram[r][c] -= f * gram[col][c]
    w = [0.0] * k
    for r in range(k - 1, -1, -1):
        acc = rhs[r] - sum(gram[r][c] * w[c] for c in range(r + 1, k))
        w[r] = acc / gram[r][r] if abs(gram[r][r]) > 1e-12 else 0.0
    return w


def predict(w, x):
    row = design_row(x)
    return sum(wi * xi for wi, xi in zip(w, row))


def avg_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for p in range(i, j + 1):
            ranks[order[p]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def compute_metrics(y_hat, y):
    n = len(y)
    denom = sum(abs(v) for v in y)
    er = sum(abs(a - b) for a, b in zip(y_hat, y)) / denom
    rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y_hat, y)) / n)
    r_hat = avg_ranks(y_hat)
    r_y = avg_ranks(y)
    mean = (n + 1) / 2.0
    num = sum((a - mean) * (b - mean) for a, b in zip(r_hat, r_y))
    va = sum((a - mean) ** 2 for a in r_hat)
    vb = sum((b - mean) ** 2 for b in r_y)
    spearman = num / math.sqrt(va * vb)
    total = sum(y)
    baseline = (n + 1) / 2.0 * total
    s_pred = sum(yv * (n + 1 - rv) for yv, rv in zip(y, r_hat))
    s_perf = sum(yv * (n + 1 - rv) for yv, rv in zip(y, r_y))
    gini = (s_pred - baseline) / (s_perf - baseline)
    return er, gini, spearman, rmse


def clamp01(v):
    return max(0.0, min(1.0, v))


def main():
    train, test = load_data()
    w = fit_ridge(train, PARAMS["reg"])
    y_hat = [predict(w, x) for x, _ in test]
    y = [t for _, t in test]
    er, gini, spearman, rmse = compute_metrics(y_hat, y)
    score = (
        clamp01(1.0 - er / ER_CAP)
        + clamp01((gini + 1.0) / 2.0)
        + clamp01((spearman + 1.0) / 2.0)
        + clamp01(1.0 - rmse / RMSE_CAP)
    ) / 4.0
    print("score = %%.12g" %% score)
    print(
        "metrics = "
        + json.dumps(
            {"er": er, "norm_gini": gini, "spearman": spearman, "rmse": rmse},
            sort_keys=True,
        )
    )


if __name__ == "__main__":
    main()
'''


def normalize_params(params: dict) -> dict:
    features = sorted(set(int(f) for f in params["features"]))
    if not features or any(f < 0 or f >= N_FEATURES for f in features):
        raise ValueError(f"bad feature subset {params['features']!r}")
    transform = str(params["transform"])
    if transform not in TRANSFORMS:
        raise ValueError(f"bad transform {transform!r}")
    reg = float(params["reg"])
    if reg not in REG_LEVELS:
        raise ValueError(f"bad reg level {reg!r}")
    return {"features": features, "transform": transform, "reg": reg}


def render_candidate(params: dict) -> str:
    params = normalize_params(params)
    return SKELETON % {"params": json.dumps(params, sort_keys=True)}


def parse_params(source_text: str) -> dict | None:
    """Pull the PARAMS line out of a rendered candidate (last one wins)."""
    found = PARAMS_RE.findall(source_text)
    if not found:
        return None
    try:
        return normalize_params(json.loads(found[-1]))
    except (ValueError, KeyError, TypeError):
        return None


def params_key(params: dict) -> tuple:
    p = normalize_params(params)
    return (tuple(p["features"]), p["transform"], p["reg"])


def all_params() -> list[dict]:
    grid = []
    for mask in range(1, 2**N_FEATURES):
        features = [j for j in range(N_FEATURES) if mask >> j & 1]
        for transform in TRANSFORMS:
            for reg in REG_LEVELS:
                grid.append({"features": features, "transform": transform, "reg": reg})
    return grid


def evaluate_source(source_text: str) -> MetricVector:
    """Run a self-contained candidate in-process and parse its contract lines."""
    buf = io.StringIO()
    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    with contextlib.redirect_stdout(buf):
        exec(compile(source_text, "<candidate>", "exec"), namespace)
    return parse_metric_output(buf.getvalue())


@lru_cache(maxsize=None)
def _evaluate_key(key: tuple) -> MetricVector:
    features, transform, reg = key
    source = render_candidate(
        {"features": list(features), "transform": transform, "reg": reg}
    )
    return evaluate_source(source)


def evaluate_params(params: dict) -> MetricVector:
    return _evaluate_key(params_key(params))


@lru_cache(maxsize=1)
def enumerate_landscape() -> dict[tuple, MetricVector]:
    """Metric vector of every grid point (cached; the landscape is fixed)."""
    return {params_key(p): evaluate_params(p) for p in all_params()}


def optimum_scalar_score() -> float:
    """Best printed composite score over the whole family."""
    return max(m.scalar_score for m in enumerate_landscape().values())


def perturb(params: dict, move: dict) -> dict:
    """Apply one structured move; unrecognized moves leave params unchanged."""
    p = normalize_params(params)
    kind = move.get("kind")
    if kind == "toggle_feature":
        j = int(move["feature"])
        feats = set(p["features"])
        if j in feats:
            if len(feats) > 1:
                feats.remove(j)
        else:
            feats.add(j)
        p["features"] = sorted(feats)
    elif kind == "set_transform":
        if move["transform"] in TRANSFORMS:
            p["transform"] = move["transform"]
    elif kind == "set_reg":
        reg = float(move["reg"])
        if reg in REG_LEVELS:
            p["reg"] = reg
    return normalize_params(p)


def possible_moves(params: dict) -> list[dict]:
    """Every single-coordinate move away from params, in a stable order."""
    p = normalize_params(params)
    moves = []
    for j in range(N_FEATURES):
        if j in p["features"] and len(p["features"]) == 1:
            continue
        moves.append({"kind": "toggle_feature", "feature": j})
    for t in TRANSFORMS:
        if t != p["transform"]:
            moves.append({"kind": "set_transform", "transform": t})
    for r in REG_LEVELS:
        if r != p["reg"]:
            moves.append({"kind": "set_reg", "reg": r})
    return moves


def describe_move(move: dict) -> str:
    if move["kind"] == "toggle_feature":
        return f"Toggle feature f{move['feature']} in the model's feature subset"
    if move["kind"] == "set_transform":
        return f"Switch the feature transform to {move['transform']}"
    return f"Set the ridge regularization strength to {move['reg']}"


_MOVE_FEATURE_RE = re.compile(r"[Tt]oggle feature f(\d)")
_MOVE_TRANSFORM_RE = re.compile(r"transform to (none|log_signed|sqrt_signed)")
_MOVE_REG_RE = re.compile(r"regularization strength to ([0-9.]+)")


def parse_move(text: str) -> dict | None:
    """Recover a structured move from a suggestion/hint sentence."""
    m = _MOVE_FEATURE_RE.search(text)
    if m:
        return {"kind": "toggle_feature", "feature": int(m.group(1))}
    m = _MOVE_TRANSFORM_RE.search(text)
    if m:
        return {"kind": "set_transform", "transform": m.group(1)}
    m = _MOVE_REG_RE.search(text)
    if m:
        try:
            return {"kind": "set_reg", "reg": float(m.group(1))}
        except ValueError:
            return None
    return None


def mix_params(a: dict, b: dict, selector: int) -> dict:
    """Coordinate-wise crossover of two parameter sets, driven by selector bits."""
    pa, pb = normalize_params(a), normalize_params(b)
    features = []
    for j in range(N_FEATURES):
        src = pa if (selector >> j) & 1 else pb
        if j in src["features"]:
            features.append(j)
    if not features:
        features = list(pa["features"])
    transform = pa["transform"] if (selector >> N_FEATURES) & 1 else pb["transform"]
    reg = pa["reg"] if (selector >> (N_FEATURES + 1)) & 1 else pb["reg"]
    return normalize_params({"features": features, "transform": transform, "reg": reg})


def default_params() -> dict:
    return {"features": [0], "transform": "none", "reg": 0.1}


def params_from_digest(digest: int) -> dict:
    """Deterministic grid point from a hash digest (root generation)."""
    grid = all_params()
    return grid[digest % len(grid)]


def label_for(params: dict) -> str:
    p = normalize_params(params)
    feats = "".join(str(j) for j in p["features"])
    reg = str(p["reg"]).replace(".", "p")
    return f"ridge_f{feats}_{p['transform']}_reg{reg}"
