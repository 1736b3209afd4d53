"""Search-and-evolve orchestrator for executable prediction pipelines.

Two phases over candidate programs produced by a pluggable generator:
a PUCT-guided tree search scored with a Pareto-aware composite reward,
then island-based evolutionary refinement of the tree champion. Runs are
deterministic under the mock backend and fully resumable from their
state ledgers.
"""

from .core import (
    CandidateNode,
    EvolutionState,
    Island,
    MetricVector,
    ProgramSource,
    RunState,
    SearchConfig,
    SearchTree,
)
from .errors import (
    AgentSearchError,
    BackendError,
    BudgetExhaustionError,
    ConfigurationError,
    GenerationError,
    PersistenceError,
)
from .evolution import run_evolution
from .executor import InlineExecutor, LocalExecutor, make_executor
from .generator import CandidateGenerator, MockBackend, RemoteBackend, make_generator
from .mcts import run_mcts
from .reporting import export_tree, leaderboard, load_state, save_state
from .session import SearchSession, build_session

__version__ = "0.1.0"

__all__ = [
    "AgentSearchError",
    "BackendError",
    "BudgetExhaustionError",
    "CandidateGenerator",
    "CandidateNode",
    "ConfigurationError",
    "EvolutionState",
    "GenerationError",
    "InlineExecutor",
    "Island",
    "LocalExecutor",
    "MetricVector",
    "MockBackend",
    "PersistenceError",
    "ProgramSource",
    "RemoteBackend",
    "RunState",
    "SearchConfig",
    "SearchSession",
    "SearchTree",
    "build_session",
    "export_tree",
    "leaderboard",
    "load_state",
    "make_executor",
    "make_generator",
    "run_evolution",
    "run_mcts",
    "save_state",
    "__version__",
]
