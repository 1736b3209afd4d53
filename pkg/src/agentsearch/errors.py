"""Exception taxonomy and process exit codes.

Every failure the orchestrator can surface maps to one of four exit codes
(plus 130 for interrupts), so shell callers can branch on the category
without parsing prose.
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_BUDGET = 3
EXIT_PERSISTENCE = 4
EXIT_INTERRUPT = 130


class AgentSearchError(Exception):
    """Base class for all orchestrator errors."""

    exit_code = EXIT_CONFIG
    category = "error"


class ConfigurationError(AgentSearchError):
    exit_code = EXIT_CONFIG
    category = "config"


class TemplateError(ConfigurationError):
    """A prompt template is missing, malformed, or missing a placeholder."""

    category = "template"


class BackendError(AgentSearchError):
    """The generator backend failed (network, HTTP status, bad reply shape)."""

    exit_code = EXIT_BACKEND
    category = "backend"

    def __init__(self, message, *, status=None, attempts=None):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class GenerationError(AgentSearchError):
    """A completion came back but no usable program could be extracted."""

    exit_code = EXIT_BACKEND
    category = "generation"


class BudgetExhaustionError(AgentSearchError):
    """The attempt cap was hit before the feasible budget was reached."""

    exit_code = EXIT_BUDGET
    category = "budget"


class InitializationError(BudgetExhaustionError):
    """Every root attempt came back infeasible; there is nothing to search."""

    category = "initialization"


class SelectionError(AgentSearchError):
    """PUCT selection was asked to pick from a tree with no feasible node."""

    exit_code = EXIT_BUDGET
    category = "selection"


class IslandExtinctionError(AgentSearchError):
    """An island lost every feasible member (recovered by reseeding)."""

    exit_code = EXIT_BUDGET
    category = "island-extinction"


class PersistenceError(AgentSearchError):
    exit_code = EXIT_PERSISTENCE
    category = "persistence"


class LedgerVersionError(PersistenceError):
    """The state file declares a format version this build does not know."""

    category = "version"


class UndefinedMetricError(AgentSearchError):
    """A metric has no defined value for the given vectors (the candidate
    that produced them is infeasible; no sentinel values are invented)."""

    exit_code = EXIT_CONFIG
    category = "undefined-metric"


class UnparseableOutputError(AgentSearchError):
    """Candidate stdout did not contain the required result grammar."""

    exit_code = EXIT_CONFIG
    category = "unparseable-output"


class InterruptRequested(BaseException):
    """Raised at an iteration boundary after SIGINT; state is saved first.

    Deliberately not an AgentSearchError so generic handlers don't eat it.
    """

    exit_code = EXIT_INTERRUPT
