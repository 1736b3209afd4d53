"""Island-based evolutionary refinement of the tree-search champion.

Every island starts from the champion plus mutated variants, then repeats
evaluate / select elites / crossover / mutate, with periodic elite migration
between islands. Fitness is the same composite reward as the tree phase but
normalized with bounds frozen from the tree archive, computed against the
growing EA archive at evaluation time and cached forever (so per-island max
fitness never decreases).
"""

from __future__ import annotations

import math

from .core import (
    CandidateNode,
    EvolutionState,
    Island,
    Lineage,
    ProgramSource,
    PHASE_DONE,
    PHASE_EA,
)
from .errors import (
    BudgetExhaustionError,
    ConfigurationError,
    IslandExtinctionError,
    SelectionError,
)
from .executor import execute_with_repair
from .mcts import label_for_source
from .reward import bounds_of, composite_reward
from .session import SearchSession


def _archive_metrics(evo: EvolutionState):
    return [evo.nodes[i].metrics for i in evo.ea_archive]


def _score_and_admit(session: SearchSession, evo: EvolutionState, node: CandidateNode) -> None:
    """Fitness of a freshly evaluated feasible node, frozen at this moment."""
    archive = _archive_metrics(evo) + [node.metrics]
    node.fitness = composite_reward(
        node.metrics, archive, session.config, frozen_bounds=evo.frozen_bounds
    )
    evo.nodes[node.id] = node
    evo.ea_archive.append(node.id)


def _evaluate_offspring(session: SearchSession, evo: EvolutionState, node: CandidateNode) -> bool:
    """Execute (with repairs) and, when feasible, score and archive a node."""
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
        evo.nodes[node.id] = node
        session.log(
            "offspring_infeasible",
            node=node.id,
            island=node.island,
            status=outcome.result.status,
        )
        return False
    node.mark_feasible(outcome.result.metrics, 0.0)
    _score_and_admit(session, evo, node)
    session.log("offspring_feasible", node=node.id, island=node.island, fitness=node.fitness)
    return True


def _hint_text(entry) -> str:
    return f"{entry.name}. {entry.advice}"


def seed_islands(session: SearchSession) -> EvolutionState:
    """Build the initial island populations around the tree-phase champion.

    The champion joins every island (as its own node, same program text and
    metrics); the rest of each population is mutated variants, each with a
    distinct advice-library hint, regenerated on failure up to the retry cap
    and dropped after that. Seed evaluations do not count toward ea_budget.
    """
    cfg = session.config
    state = session.state
    tree = state.tree
    if tree is None or state.c_mcts_id is None:
        raise ConfigurationError("evolution requires a completed tree phase")
    champion = tree.node(state.c_mcts_id)
    if not champion.feasible:
        raise ConfigurationError("tree champion is not feasible")

    evo = EvolutionState(
        frozen_bounds=[(lo, hi) for lo, hi in bounds_of(tree.archive_metrics(), cfg.objectives)]
    )

    advice = session.generator.advice
    for k in range(cfg.num_islands):
        island = Island(id=k)
        copy = CandidateNode(
            id=session.take_id(),
            program=champion.program,
            status=champion.status,
            metrics=champion.metrics,
            reward=champion.reward,
            visit_count=1,
            value=champion.value,
            label=champion.label,
            origin=champion.origin,
            generation=0,
            island=k,
        )
        _score_and_admit(session, evo, copy)
        island.population.append(copy.id)

        hint_count = min(cfg.population_size - 1, len(advice))
        picks = session.rng.sample_distinct(len(advice), hint_count)
        for slot in range(hint_count):
            entry = advice[picks[slot]]
            placed = False
            for retry in range(cfg.seed_retry_limit + 1):
                source = session.generator.mutate(
                    champion.program.source_text, _hint_text(entry)
                )
                program = ProgramSource(
                    id=session.take_id(),
                    source_text=source,
                    lineage=Lineage(
                        kind="mutation", parents=(champion.program.id,), hint=entry.name
                    ),
                    label=champion.program.label,
                )
                node = CandidateNode(
                    id=program.id,
                    program=program,
                    label=label_for_source(source, champion.label),
                    origin="mutation",
                    generation=0,
                    island=k,
                )
                if _evaluate_offspring(session, evo, node):
                    island.population.append(node.id)
                    placed = True
                    break
                entry = advice[session.rng.choice_index(len(advice))]
            if not placed:
                session.log("seed_slot_dropped", island=k, slot=slot)
        if not island.population:
            raise IslandExtinctionError(f"island {k} seeded with no feasible member")
        evo.islands.append(island)

    evo.seeded = True
    session.log("islands_seeded", islands=cfg.num_islands, archive=len(evo.ea_archive))
    return evo


def select_elites(evo: EvolutionState, island: Island, elite_ratio: float) -> list[int]:
    """Top ceil(rho * n) members by fitness, ties to the lowest id."""
    members = [evo.nodes[i] for i in island.population if evo.nodes[i].feasible]
    if not members:
        raise IslandExtinctionError(f"island {island.id} has no feasible member")
    members.sort(key=lambda n: (-n.fitness, n.id))
    count = math.ceil(len(members) * elite_ratio)
    island.elites = [n.id for n in members[:count]]
    return island.elites


def _island_best(evo: EvolutionState, island: Island) -> CandidateNode:
    return min(
        (evo.nodes[i] for i in island.population),
        key=lambda n: (-(n.fitness or 0.0), n.id),
    )


def step_generation(session: SearchSession, evo: EvolutionState, island: Island) -> None:
    """One generation on one island: refill the population with offspring.

    Offspring are crossover children of elite pairs, each then mutated with
    a hint scored by the expert-selection role. Generation stops early the
    moment the run-wide feasible-offspring budget is met. The next population
    is elites plus feasible offspring, ordered by fitness.
    """
    cfg = session.config
    state = session.state
    elites = [evo.nodes[i] for i in island.elites]
    if not elites:
        raise SelectionError(f"island {island.id} stepped without elites")

    best = _island_best(evo, island)
    hints = session.generator.propose_suggestions(
        best.program.source_text, elites[0].program.source_text
    )
    hint_weights = session.generator.score_options(elites[0].program.source_text, hints)

    next_generation = island.generation + 1
    need = max(cfg.population_size - len(elites), 0)
    offspring: list[CandidateNode] = []
    for _ in range(need):
        if evo.feasible_offspring >= cfg.ea_budget:
            break
        if len(elites) >= 2:
            i, j = session.rng.sample_distinct(len(elites), 2)
            first, second = elites[i], elites[j]
        else:
            first = second = elites[0]

        comparison = session.generator.compare(
            first.program.source_text, second.program.source_text
        )
        child_source = session.generator.crossover(
            comparison,
            first.fitness,
            first.program.source_text,
            second.fitness,
            second.program.source_text,
        )
        hint = hints[session.rng.weighted_index(hint_weights)]
        mutated = session.generator.mutate(child_source, hint)

        kind = "crossover" if first.id != second.id else "mutation"
        parents = (
            (first.program.id, second.program.id)
            if first.id != second.id
            else (first.program.id,)
        )
        program = ProgramSource(
            id=session.take_id(),
            source_text=mutated,
            lineage=Lineage(kind=kind, parents=parents, hint=hint),
            label=first.program.label,
        )
        node = CandidateNode(
            id=program.id,
            program=program,
            label=label_for_source(mutated, first.label),
            origin=kind,
            generation=next_generation,
            island=island.id,
        )
        state.ea_attempts += 1
        if _evaluate_offspring(session, evo, node):
            offspring.append(node)
            evo.feasible_offspring += 1

    pool = {n.id: n for n in elites}
    pool.update({n.id: n for n in offspring})
    ordered = sorted(pool.values(), key=lambda n: (-n.fitness, n.id))
    island.population = [n.id for n in ordered[: cfg.population_size]]
    island.generation = next_generation
    session.log(
        "generation_done",
        island=island.id,
        generation=island.generation,
        offspring=len(offspring),
        population=len(island.population),
    )


def migrate(session: SearchSession, evo: EvolutionState) -> None:
    """Copy every island's elites into every other island.

    Migrants identical (by source text) to anything already kept are dropped,
    and that deduplication also collapses same-source members inside one
    island, local elites included. Populations are then cut back to size by
    fitness with surviving local elites always retained.
    """
    cfg = session.config
    snapshots = {
        island.id: [evo.nodes[i] for i in island.elites] for island in evo.islands
    }
    for island in evo.islands:
        incoming: list[CandidateNode] = []
        for other in evo.islands:
            if other.id != island.id:
                incoming.extend(snapshots[other.id])
        elite_ids = set(island.elites)
        local = [evo.nodes[i] for i in island.population]
        ordered = (
            [n for n in local if n.id in elite_ids]
            + [n for n in local if n.id not in elite_ids]
            + incoming
        )
        seen: set[str] = set()
        kept: list[CandidateNode] = []
        for node in ordered:
            text = node.program.source_text
            if text in seen:
                continue
            seen.add(text)
            kept.append(node)
        elites_kept = [n for n in kept if n.id in elite_ids]
        rest = sorted(
            (n for n in kept if n.id not in elite_ids), key=lambda n: (-n.fitness, n.id)
        )
        room = max(cfg.population_size - len(elites_kept), 0)
        merged = sorted(elites_kept + rest[:room], key=lambda n: (-n.fitness, n.id))
        island.population = [n.id for n in merged]
    session.log("migration", generation=evo.generation)


def global_best(evo: EvolutionState) -> CandidateNode:
    """Highest-fitness member over all final populations, ties to lowest id."""
    best: CandidateNode | None = None
    for island in evo.islands:
        for node_id in island.population:
            node = evo.nodes[node_id]
            if not node.feasible:
                continue
            if (
                best is None
                or node.fitness > best.fitness
                or (node.fitness == best.fitness and node.id < best.id)
            ):
                best = node
    if best is None:
        raise SelectionError("no feasible candidate in any island")
    return best


def run_evolution(session: SearchSession) -> None:
    """Drive the island phase to exactly ``ea_budget`` feasible offspring."""
    state = session.state
    cfg = session.config
    if state.phase != PHASE_EA:
        if state.phase == PHASE_DONE:
            return
        raise ConfigurationError(
            f"evolution phase requires a finished tree phase, run is in {state.phase!r}"
        )

    if state.evolution is None or not state.evolution.seeded:
        session.tick()
        state.evolution = seed_islands(session)
    evo = state.evolution

    cap = cfg.attempt_cap_factor * cfg.ea_budget
    while evo.feasible_offspring < cfg.ea_budget:
        session.tick()
        if state.ea_attempts >= cap:
            raise BudgetExhaustionError(
                f"island phase used {state.ea_attempts} attempts without reaching "
                f"{cfg.ea_budget} feasible offspring (cap {cap})"
            )
        island = evo.islands[evo.next_island]
        select_elites(evo, island, cfg.elite_ratio)
        step_generation(session, evo, island)
        evo.next_island += 1
        if evo.next_island >= len(evo.islands):
            evo.next_island = 0
            evo.generation += 1
            if evo.generation % cfg.migration_period == 0:
                migrate(session, evo)

    best = global_best(evo)
    state.c_star_id = best.id
    state.phase = PHASE_DONE
    session.log(
        "evolution_done",
        best=best.id,
        fitness=best.fitness,
        offspring=evo.feasible_offspring,
        attempts=state.ea_attempts,
    )
