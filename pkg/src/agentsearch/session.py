"""Wiring that holds one run together: state, rng, ids, checkpointing."""

from __future__ import annotations

from typing import Callable

from .core import IdAllocator, RunState, SearchConfig
from .rng import CountingRng


class SearchSession:
    """Shared context threaded through both search phases.

    The rng and id allocator are the only mutable processes outside the
    RunState; ``sync()`` folds their counters back into the state so a saved
    snapshot can rebuild them exactly. ``tick()`` is called at the top of
    every outer loop iteration and is where checkpoint callbacks run, which
    is also the interruption point: a checkpoint is free to raise.
    """

    def __init__(
        self,
        config: SearchConfig,
        generator,
        executor,
        state: RunState | None = None,
        checkpoint: Callable[[RunState], None] | None = None,
    ):
        self.config = config
        self.generator = generator
        self.executor = executor
        self.state = state if state is not None else RunState(config=config)
        self.rng = CountingRng(config.rng_seed)
        if self.state.rng_draws:
            self.rng.fast_forward(self.state.rng_draws)
        self.ids = IdAllocator(self.state.next_id)
        self._checkpoint = checkpoint

    def sync(self) -> None:
        self.state.rng_draws = self.rng.draws
        self.state.next_id = self.ids.next_id

    def tick(self) -> None:
        self.sync()
        if self._checkpoint is not None:
            self._checkpoint(self.state)

    def log(self, kind: str, **fields) -> None:
        self.sync()
        self.state.log(kind, **fields)

    def take_id(self) -> int:
        return self.ids.take()


def build_session(
    config: SearchConfig,
    state: RunState | None = None,
    checkpoint: Callable[[RunState], None] | None = None,
) -> SearchSession:
    """Assemble a session with the generator and executor the config names."""
    from .executor import make_executor
    from .generator import make_generator

    return SearchSession(
        config,
        make_generator(config),
        make_executor(config),
        state=state,
        checkpoint=checkpoint,
    )
