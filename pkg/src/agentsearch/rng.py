"""Counted random source.

All stochastic decisions in the orchestrator flow through one CountingRng so
that a run can be resumed by re-seeding and fast-forwarding the recorded draw
count. One "draw" is one underlying uniform sample; every helper below is
built from uniforms only, which keeps the draw count an exact replay key.
"""
from __future__ import annotations

import random


class CountingRng:
    def __init__(self, seed: int, draws: int = 0):
        self.seed = seed
        self._rng = random.Random(seed)
        self.draws = 0
        if draws:
            self.fast_forward(draws)

    def fast_forward(self, draws: int) -> None:
        if draws < self.draws:
            raise ValueError(f"cannot rewind rng from {self.draws} to {draws} draws")
        while self.draws < draws:
            self.random()

    def random(self) -> float:
        """One uniform draw in [0, 1). The only primitive; everything counts through here."""
        self.draws += 1
        return self._rng.random()

    def choice_index(self, n: int) -> int:
        if n <= 0:
            raise ValueError("choice from empty range")
        return min(int(self.random() * n), n - 1)

    def weighted_index(self, weights) -> int:
        """Inverse-CDF sample: one draw, scanned against cumulative weights."""
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        r = self.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += float(w)
            if r < acc:
                return i
        return len(weights) - 1

    def sample_distinct(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), uniform without replacement (k draws)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct from {n}")
        pool = list(range(n))
        picked = []
        for _ in range(k):
            j = self.choice_index(len(pool))
            picked.append(pool.pop(j))
        return picked

    def shuffled(self, seq) -> list:
        """Fisher-Yates copy, len(seq) draws."""
        out = list(seq)
        for i in range(len(out) - 1, 0, -1):
            j = self.choice_index(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
