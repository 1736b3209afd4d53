"""PUCT tree search over candidate programs.

Roots come from distinct method hints drawn from the advice library; every
later candidate is an expansion of a selected node guided by comparison
advice. Rewards are Pareto-aware composites over the archive as it existed
at evaluation time and are never recomputed.
"""

from __future__ import annotations

import math

from . import template_family
from .core import CandidateNode, Lineage, ProgramSource, SearchTree, PHASE_EA, PHASE_MCTS
from .errors import (
    BudgetExhaustionError,
    ConfigurationError,
    InitializationError,
    SelectionError,
)
from .executor import execute_with_repair
from .reward import composite_reward
from .session import SearchSession


def label_for_source(source_text: str, fallback: str) -> str:
    """Cosmetic node label: the pipeline family's own naming when the source
    belongs to it, otherwise the provided fallback."""
    params = template_family.parse_params(source_text)
    if params is not None:
        return template_family.label_for(params)
    return fallback


def _evaluate_candidate(session: SearchSession, node: CandidateNode, archive_metrics) -> bool:
    """Run a node's program (with repairs) and score it against the archive.

    Returns True when the node came out feasible. The node's program is
    replaced by the repaired version when repairs ran.
    """
    outcome = execute_with_repair(
        node.program,
        session.executor,
        session.generator.repair,
        session.config.repair_attempts,
        session.take_id,
        event_sink=lambda kind, fields: session.log(kind, **fields),
    )
    node.program = outcome.program
    node.repair_count = outcome.repairs_used
    if not outcome.result.ok:
        node.mark_infeasible()
        session.log(
            "candidate_infeasible",
            node=node.id,
            status=outcome.result.status,
            detail=outcome.result.detail,
        )
        return False
    metrics = outcome.result.metrics
    reward = composite_reward(metrics, list(archive_metrics) + [metrics], session.config)
    node.mark_feasible(metrics, reward)
    session.log("candidate_feasible", node=node.id, reward=reward)
    return True


def init_roots(session: SearchSession) -> SearchTree:
    """Generate, execute, and score the root candidates.

    Each root gets a distinct method hint from the advice library. Priors
    over the roots come from one expert-selection call across the chosen
    hint names. A run with zero feasible roots cannot proceed.
    """
    cfg = session.config
    advice = session.generator.advice
    if cfg.num_roots < 1:
        raise ConfigurationError(f"num_roots must be >= 1, got {cfg.num_roots!r}")
    if cfg.num_roots > len(advice):
        raise ConfigurationError(
            f"num_roots={cfg.num_roots} exceeds the {len(advice)}-entry advice library"
        )
    picks = session.rng.sample_distinct(len(advice), cfg.num_roots)
    entries = [advice[i] for i in picks]

    roots: list[CandidateNode] = []
    for entry in entries:
        source = session.generator.generate_root(
            cfg.task_name, f"{entry.name}. {entry.advice}"
        )
        program = ProgramSource(
            id=session.take_id(),
            source_text=source,
            lineage=Lineage(kind="root-init", parents=(), hint=entry.name),
            label=entry.name,
        )
        node = CandidateNode(
            id=program.id,
            program=program,
            label=label_for_source(source, entry.name),
            origin="root-init",
        )
        roots.append(node)
        session.log("root_generated", node=node.id, hint=entry.name)

    weights = session.generator.score_options(
        roots[0].program.source_text, [e.name for e in entries]
    )

    tree = SearchTree()
    archive_metrics: list = []
    for node, prior in zip(roots, weights):
        node.prior = prior
        session.state.mcts_attempts += 1
        if _evaluate_candidate(session, node, archive_metrics):
            archive_metrics.append(node.metrics)
        tree.add_root(node)

    if tree.feasible_count == 0:
        raise InitializationError(
            f"all {cfg.num_roots} root candidates failed execution"
        )
    return tree


def select_node(tree: SearchTree, c_puct: float) -> CandidateNode:
    """PUCT argmax over every feasible node; ties go to the lowest id."""
    best: CandidateNode | None = None
    best_score = -math.inf
    for node_id in sorted(tree.archive):
        node = tree.node(node_id)
        parent_visits = tree.parent_visits(node)
        score = node.value + c_puct * node.prior * math.sqrt(parent_visits) / (
            1 + node.visit_count
        )
        if score > best_score:
            best, best_score = node, score
    if best is None:
        raise SelectionError("no feasible node to select")
    return best


def backpropagate(tree: SearchTree, node_id: int, reward: float) -> None:
    """Fold a new evaluation into every ancestor's running mean, then count
    the visit on the virtual super-root. The evaluated node itself was
    already initialized to one visit at its own reward."""
    node = tree.node(node_id)
    ancestor_id = node.parent_id
    while ancestor_id is not None:
        ancestor = tree.node(ancestor_id)
        ancestor.visit_count += 1
        ancestor.value += (reward - ancestor.value) / ancestor.visit_count
        ancestor_id = ancestor.parent_id
    tree.super_root_visits += 1


def expand(session: SearchSession, tree: SearchTree, parent: CandidateNode) -> CandidateNode:
    """Grow one child under ``parent`` from scored improvement suggestions."""
    cfg = session.config
    reference = tree.best_feasible()
    parent_code = parent.program.source_text
    suggestions = session.generator.propose_suggestions(
        reference.program.source_text, parent_code
    )
    weights = session.generator.score_options(parent_code, suggestions)
    pick = session.rng.weighted_index(weights)
    suggestion = suggestions[pick]

    source = session.generator.apply_suggestion(
        parent_code, f"Suggestion {pick + 1}", suggestion
    )
    program = ProgramSource(
        id=session.take_id(),
        source_text=source,
        lineage=Lineage(kind="expansion", parents=(parent.program.id,), hint=suggestion),
        label=parent.program.label,
    )
    node = CandidateNode(
        id=program.id,
        program=program,
        prior=weights[pick],
        label=label_for_source(source, parent.label),
        origin="expansion",
    )
    session.log("expansion", parent=parent.id, node=node.id, pick=pick)

    session.state.mcts_attempts += 1
    feasible = _evaluate_candidate(session, node, tree.archive_metrics())
    tree.add_child(parent.id, node)
    if feasible:
        backpropagate(tree, node.id, node.reward)
    return node


def run_roots_only(session: SearchSession) -> None:
    """Ablation tree phase: generate roots, skip expansion entirely.

    The champion handed to the island phase is simply the best root, which
    isolates how much the guided tree growth itself contributes.
    """
    state = session.state
    if state.phase != PHASE_MCTS:
        return
    if state.tree is None:
        session.tick()
        state.tree = init_roots(session)
        session.log("roots_ready", feasible=state.tree.feasible_count)
    best = state.tree.best_feasible()
    state.c_mcts_id = best.id
    state.phase = PHASE_EA
    session.log("mcts_skipped", best=best.id, feasible=state.tree.feasible_count)


def run_mcts(session: SearchSession) -> None:
    """Drive the tree phase to exactly ``mcts_budget`` feasible candidates."""
    state = session.state
    cfg = session.config
    if state.phase != PHASE_MCTS:
        return

    if state.tree is None:
        session.tick()
        state.tree = init_roots(session)
        session.log("roots_ready", feasible=state.tree.feasible_count)

    cap = cfg.attempt_cap_factor * cfg.mcts_budget
    while state.tree.feasible_count < cfg.mcts_budget:
        session.tick()
        if state.mcts_attempts >= cap:
            raise BudgetExhaustionError(
                f"tree phase used {state.mcts_attempts} attempts without reaching "
                f"{cfg.mcts_budget} feasible candidates (cap {cap})"
            )
        parent = select_node(state.tree, cfg.c_puct)
        expand(session, state.tree, parent)

    best = state.tree.best_feasible()
    state.c_mcts_id = best.id
    state.phase = PHASE_EA
    session.log(
        "mcts_done",
        best=best.id,
        feasible=state.tree.feasible_count,
        attempts=state.mcts_attempts,
    )
