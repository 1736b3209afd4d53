"""Pareto-aware composite reward.

The scalar reward of a candidate is a weighted sum of its direction-folded,
min-max normalized objectives, plus a flat bonus for sitting on the Pareto
front of the archive and a crowding bonus for being isolated on that front.
Rewards are computed against the archive as it stood at evaluation time and
are never recomputed retroactively.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MetricVector, ObjectiveSpec, SearchConfig
from .errors import ConfigurationError

Bounds = list[tuple[float, float]]


def bounds_of(archive: list[MetricVector], objectives) -> Bounds:
    """Raw per-objective (min, max) over the archive. Used to freeze normalization."""
    if not archive:
        raise ConfigurationError("cannot take bounds of an empty archive")
    out = []
    for obj in objectives:
        col = [m.value(obj.name) for m in archive]
        out.append((min(col), max(col)))
    return out


@dataclass(frozen=True)
class NormalizedArchive:
    """Archive metrics folded into [0, 1] per objective, 1 = best."""

    points: np.ndarray  # shape (n, m)
    bounds: tuple[tuple[float, float], ...]
    objective_names: tuple[str, ...]
    frozen: bool


def normalize(
    archive: list[MetricVector],
    objectives,
    frozen_bounds: Bounds | None = None,
) -> NormalizedArchive:
    """Min-max normalize each objective and fold direction so 1 is best.

    A constant objective (zero span) normalizes to 0.5 everywhere. With frozen
    bounds, raw values outside the frozen range are clamped first, so results
    stay in [0, 1].
    """
    if not archive:
        raise ConfigurationError("cannot normalize an empty archive")
    objectives = list(objectives)
    if frozen_bounds is not None and len(frozen_bounds) != len(objectives):
        raise ConfigurationError("frozen_bounds length must match objectives")
    bounds = frozen_bounds if frozen_bounds is not None else bounds_of(archive, objectives)
    n, m = len(archive), len(objectives)
    points = np.empty((n, m), dtype=float)
    for j, obj in enumerate(objectives):
        lo, hi = bounds[j]
        if lo > hi:
            raise ConfigurationError(f"invalid bounds for {obj.name}: ({lo}, {hi})")
        col = np.array([a.value(obj.name) for a in archive], dtype=float)
        if frozen_bounds is not None:
            col = np.clip(col, lo, hi)
        span = hi - lo
        if span == 0.0:
            points[:, j] = 0.5
        elif obj.direction == "maximize":
            points[:, j] = (col - lo) / span
        else:
            points[:, j] = (hi - col) / span
    return NormalizedArchive(
        points=points,
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        objective_names=tuple(o.name for o in objectives),
        frozen=frozen_bounds is not None,
    )


def pareto_front(points: np.ndarray) -> np.ndarray:
    """Boolean mask of non-dominated rows (all objectives folded, higher = better).

    A row is dominated if some other row is >= everywhere and > somewhere.
    Exact duplicates do not dominate each other, so both stay on the front.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ConfigurationError("pareto_front expects a non-empty 2d array")
    n = len(pts)
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        if not mask[i]:
            continue
        ge = (pts >= pts[i]).all(axis=1)
        gt = (pts > pts[i]).any(axis=1)
        if (ge & gt).any():
            mask[i] = False
    return mask


def crowding_distance(front_points: np.ndarray) -> np.ndarray:
    """Crowding distance over front members, scaled into [0, 1].

    Per objective the front is sorted and interior members accumulate the
    next-minus-previous neighbor gap; the raw sum is divided by 2m and capped
    at 1. A member whose value equals the front min or max on any objective is
    a boundary and gets exactly 1. Members duplicated exactly (and not on a
    boundary) get 0: a point with an identical twin is maximally crowded.
    """
    pts = np.asarray(front_points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ConfigurationError("crowding_distance expects a non-empty 2d array")
    k, m = pts.shape
    if k <= 2:
        return np.ones(k, dtype=float)
    raw = np.zeros(k, dtype=float)
    boundary = np.zeros(k, dtype=bool)
    for j in range(m):
        col = pts[:, j]
        lo, hi = col.min(), col.max()
        boundary |= (col == lo) | (col == hi)
        order = np.lexsort((np.arange(k), col))
        sorted_vals = col[order]
        for pos in range(1, k - 1):
            raw[order[pos]] += sorted_vals[pos + 1] - sorted_vals[pos - 1]
    dist = np.minimum(raw / (2.0 * m), 1.0)
    dist[boundary] = 1.0
    seen: dict[tuple, list[int]] = {}
    for i in range(k):
        seen.setdefault(tuple(pts[i]), []).append(i)
    for twins in seen.values():
        if len(twins) > 1:
            for i in twins:
                if not boundary[i]:
                    dist[i] = 0.0
    return dist


def composite_rewards(
    archive: list[MetricVector],
    config: SearchConfig,
    frozen_bounds: Bounds | None = None,
) -> np.ndarray:
    """Composite reward of every archive member at once."""
    norm = normalize(archive, config.objectives, frozen_bounds)
    weights = np.array(config.weights(), dtype=float)
    base = norm.points @ weights
    front = pareto_front(norm.points)
    crowd = np.zeros(len(archive), dtype=float)
    crowd[front] = crowding_distance(norm.points[front])
    return base + config.beta * front.astype(float) + config.gamma * crowd


def composite_reward(
    node_metrics: MetricVector,
    archive: list[MetricVector],
    config: SearchConfig,
    frozen_bounds: Bounds | None = None,
) -> float:
    """Reward of one archive member (it must already be in the archive)."""
    idx = None
    for i, m in enumerate(archive):
        if m is node_metrics:
            idx = i
            break
    if idx is None:
        for i, m in enumerate(archive):
            if m == node_metrics:
                idx = i
                break
    if idx is None:
        raise ConfigurationError("node metrics are not a member of the archive")
    return float(composite_rewards(archive, config, frozen_bounds)[idx])
