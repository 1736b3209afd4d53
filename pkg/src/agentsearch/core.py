"""Core data model: programs, metric vectors, objectives, tree, islands, config.

Identity and ordering rules that the rest of the package leans on:

* every program/node id comes from one monotonically increasing counter,
  so "lowest id" is a total creation-order tie-break;
* a node is feasible exactly when it carries both a metric vector and a
  reward; infeasible nodes stay in the tree but never enter the archive;
* the MCTS super-root is virtual: it owns no program, only a visit counter
  on the tree itself.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError

METRIC_NAMES = ("er", "norm_gini", "spearman", "rmse")
METRIC_DIRECTIONS = {
    "er": "minimize",
    "norm_gini": "maximize",
    "spearman": "maximize",
    "rmse": "minimize",
}

LINEAGE_KINDS = ("root-init", "expansion", "crossover", "mutation", "repair")

PENDING = "pending"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"

PHASE_MCTS = "mcts"
PHASE_EA = "ea"
PHASE_DONE = "done"


class IdAllocator:
    """Monotone integer ids, shared by programs and nodes across both phases."""

    def __init__(self, next_id: int = 1):
        self.next_id = next_id

    def take(self) -> int:
        nid = self.next_id
        self.next_id += 1
        return nid


@dataclass(frozen=True)
class Lineage:
    kind: str
    parents: tuple[int, ...] = ()
    hint: str | None = None

    def __post_init__(self):
        if self.kind not in LINEAGE_KINDS:
            raise ConfigurationError(f"unknown lineage kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "parents": list(self.parents), "hint": self.hint}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], parents=tuple(d["parents"]), hint=d.get("hint"))


@dataclass(frozen=True)
class ProgramSource:
    """One executable candidate program plus where it came from."""

    id: int
    source_text: str
    lineage: Lineage
    label: str = ""

    def __post_init__(self):
        if not self.source_text.strip():
            raise ConfigurationError("program source must be non-empty")

    def to_dict(self):
        return {
            "id": self.id,
            "source_text": self.source_text,
            "lineage": self.lineage.to_dict(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            source_text=d["source_text"],
            lineage=Lineage.from_dict(d["lineage"]),
            label=d.get("label", ""),
        )


@dataclass(frozen=True)
class MetricVector:
    """The four regression/ranking objectives plus the candidate's own scalar score."""

    er: float
    norm_gini: float
    spearman: float
    rmse: float
    scalar_score: float | None = None

    def __post_init__(self):
        for name in ("er", "rmse"):
            v = getattr(self, name)
            if not (v >= 0.0) or v != v:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v!r}")
        if not (-1.0 - 1e-9 <= self.spearman <= 1.0 + 1e-9):
            raise ConfigurationError(f"spearman out of [-1, 1]: {self.spearman!r}")
        for name in METRIC_NAMES:
            v = float(getattr(self, name))
            if v != v or v in (float("inf"), float("-inf")):
                raise ConfigurationError(f"{name} must be finite, got {v!r}")

    def value(self, name: str) -> float:
        if name not in METRIC_NAMES:
            raise ConfigurationError(f"unknown metric {name!r}")
        return float(getattr(self, name))

    def to_dict(self):
        d = {name: float(getattr(self, name)) for name in METRIC_NAMES}
        d["scalar_score"] = self.scalar_score
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            er=d["er"],
            norm_gini=d["norm_gini"],
            spearman=d["spearman"],
            rmse=d["rmse"],
            scalar_score=d.get("scalar_score"),
        )


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    direction: str
    weight: float

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ConfigurationError(f"unknown objective {self.name!r}")
        if self.direction != METRIC_DIRECTIONS[self.name]:
            raise ConfigurationError(
                f"objective {self.name} must have direction {METRIC_DIRECTIONS[self.name]!r},"
                f" got {self.direction!r}"
            )
        if not (self.weight >= 0.0):
            raise ConfigurationError(f"objective weight must be >= 0, got {self.weight!r}")

    def to_dict(self):
        return {"name": self.name, "direction": self.direction, "weight": self.weight}

    @classmethod
    def from_dict(cls, d):
        return cls(name=d["name"], direction=d["direction"], weight=float(d["weight"]))


def default_objectives() -> tuple[ObjectiveSpec, ...]:
    return tuple(
        ObjectiveSpec(name=n, direction=METRIC_DIRECTIONS[n], weight=0.25) for n in METRIC_NAMES
    )


def validate_objectives(objectives) -> None:
    names = [o.name for o in objectives]
    if sorted(names) != sorted(METRIC_NAMES):
        raise ConfigurationError(f"objectives must cover exactly {METRIC_NAMES}, got {names}")
    total = sum(o.weight for o in objectives)
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"objective weights must sum to 1 within 1e-9, got {total!r}")


@dataclass
class CandidateNode:
    """A program in the search tree (or in an island population).

    Feasibility contract: status == "feasible" iff metrics is set iff reward
    is set, and a feasible node always has visit_count >= 1.
    """

    id: int
    program: ProgramSource
    parent_id: int | None = None
    children: list[int] = field(default_factory=list)
    status: str = PENDING
    metrics: MetricVector | None = None
    reward: float | None = None
    visit_count: int = 0
    value: float = 0.0
    prior: float = 1.0
    depth: int = 0
    label: str = ""
    fitness: float | None = None
    generation: int | None = None
    island: int | None = None
    repair_count: int = 0
    origin: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def mark_feasible(self, metrics: MetricVector, reward: float) -> None:
        self.status = FEASIBLE
        self.metrics = metrics
        self.reward = float(reward)
        self.visit_count = 1
        self.value = float(reward)

    def mark_infeasible(self) -> None:
        self.status = INFEASIBLE
        self.metrics = None
        self.reward = None

    def check(self) -> None:
        has_m = self.metrics is not None
        has_r = self.reward is not None
        if self.status == FEASIBLE:
            if not (has_m and has_r):
                raise ConfigurationError(f"feasible node {self.id} missing metrics or reward")
            if self.visit_count < 1:
                raise ConfigurationError(f"feasible node {self.id} has visit_count < 1")
        elif has_m or has_r:
            raise ConfigurationError(f"non-feasible node {self.id} carries metrics or reward")
        if not (0.0 < self.prior <= 1.0):
            raise ConfigurationError(f"node {self.id} prior out of (0, 1]: {self.prior!r}")

    def to_dict(self):
        return {
            "id": self.id,
            "program": self.program.to_dict(),
            "parent_id": self.parent_id,
            "children": list(self.children),
            "status": self.status,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "reward": self.reward,
            "visit_count": self.visit_count,
            "value": self.value,
            "prior": self.prior,
            "depth": self.depth,
            "label": self.label,
            "fitness": self.fitness,
            "generation": self.generation,
            "island": self.island,
            "repair_count": self.repair_count,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d):
        node = cls(
            id=d["id"],
            program=ProgramSource.from_dict(d["program"]),
            parent_id=d.get("parent_id"),
            children=list(d.get("children", [])),
            status=d["status"],
            metrics=MetricVector.from_dict(d["metrics"]) if d.get("metrics") else None,
            reward=d.get("reward"),
            visit_count=d.get("visit_count", 0),
            value=d.get("value", 0.0),
            prior=d.get("prior", 1.0),
            depth=d.get("depth", 0),
            label=d.get("label", ""),
            fitness=d.get("fitness"),
            generation=d.get("generation"),
            island=d.get("island"),
            repair_count=d.get("repair_count", 0),
            origin=d.get("origin", ""),
        )
        return node


@dataclass
class SearchTree:
    """PUCT tree rooted at a virtual super-root.

    nodes holds the MCTS-phase nodes only; archive lists feasible node ids in
    evaluation order; super_root_visits equals the sum of root visit counts.
    """

    nodes: dict[int, CandidateNode] = field(default_factory=dict)
    root_ids: list[int] = field(default_factory=list)
    archive: list[int] = field(default_factory=list)
    super_root_visits: int = 0

    @property
    def feasible_count(self) -> int:
        return len(self.archive)

    def node(self, node_id: int) -> CandidateNode:
        return self.nodes[node_id]

    def parent_visits(self, node: CandidateNode) -> int:
        if node.parent_id is None:
            return self.super_root_visits
        return self.nodes[node.parent_id].visit_count

    def feasible_nodes(self) -> list[CandidateNode]:
        return [self.nodes[i] for i in self.archive]

    def archive_metrics(self) -> list[MetricVector]:
        return [self.nodes[i].metrics for i in self.archive]

    def add_root(self, node: CandidateNode) -> None:
        if node.id in self.nodes:
            raise ConfigurationError(f"duplicate node id {node.id}")
        node.parent_id = None
        node.depth = 1
        self.nodes[node.id] = node
        self.root_ids.append(node.id)
        self.root_ids.sort()
        if node.feasible:
            self.archive.append(node.id)
            self.super_root_visits += 1

    def add_child(self, parent_id: int, node: CandidateNode) -> None:
        if node.id in self.nodes:
            raise ConfigurationError(f"duplicate node id {node.id}")
        parent = self.nodes[parent_id]
        node.parent_id = parent_id
        node.depth = parent.depth + 1
        self.nodes[node.id] = node
        parent.children.append(node.id)
        if node.feasible:
            self.archive.append(node.id)

    def best_feasible(self) -> CandidateNode:
        """Highest Q among feasible nodes, ties to the lowest id."""
        best = None
        for nid in self.archive:
            node = self.nodes[nid]
            if (
                best is None
                or node.value > best.value
                or (node.value == best.value and node.id < best.id)
            ):
                best = node
        if best is None:
            raise ConfigurationError("tree has no feasible node")
        return best

    def to_dict(self):
        return {
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "root_ids": list(self.root_ids),
            "archive": list(self.archive),
            "super_root_visits": self.super_root_visits,
        }

    @classmethod
    def from_dict(cls, d):
        tree = cls(
            nodes={n["id"]: CandidateNode.from_dict(n) for n in d["nodes"]},
            root_ids=list(d["root_ids"]),
            archive=list(d["archive"]),
            super_root_visits=d["super_root_visits"],
        )
        return tree


def new_search_tree(roots: list[CandidateNode]) -> SearchTree:
    """Build a tree from feasible, already-rewarded roots.

    An empty list or any non-feasible root is a configuration error; attempts
    that failed execution are attached afterwards via add_root on the result.
    """
    if not roots:
        raise ConfigurationError("new_search_tree requires at least one root")
    tree = SearchTree()
    for node in roots:
        if not node.feasible or node.reward is None:
            raise ConfigurationError(
                f"new_search_tree root {node.id} must be feasible with a reward"
            )
        node.check()
        tree.add_root(node)
    return tree


@dataclass
class Island:
    id: int
    population: list[int] = field(default_factory=list)
    elites: list[int] = field(default_factory=list)
    generation: int = 0

    def to_dict(self):
        return {
            "id": self.id,
            "population": list(self.population),
            "elites": list(self.elites),
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            population=list(d["population"]),
            elites=list(d.get("elites", [])),
            generation=d.get("generation", 0),
        )


@dataclass
class EvolutionState:
    """Island populations plus the frozen normalization context for fitness."""

    islands: list[Island] = field(default_factory=list)
    nodes: dict[int, CandidateNode] = field(default_factory=dict)
    ea_archive: list[int] = field(default_factory=list)
    frozen_bounds: list[tuple[float, float]] = field(default_factory=list)
    feasible_offspring: int = 0
    generation: int = 0
    next_island: int = 0
    seeded: bool = False

    def to_dict(self):
        return {
            "islands": [i.to_dict() for i in self.islands],
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "ea_archive": list(self.ea_archive),
            "frozen_bounds": [[lo, hi] for lo, hi in self.frozen_bounds],
            "feasible_offspring": self.feasible_offspring,
            "generation": self.generation,
            "next_island": self.next_island,
            "seeded": self.seeded,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            islands=[Island.from_dict(i) for i in d["islands"]],
            nodes={n["id"]: CandidateNode.from_dict(n) for n in d["nodes"]},
            ea_archive=list(d["ea_archive"]),
            frozen_bounds=[(b[0], b[1]) for b in d["frozen_bounds"]],
            feasible_offspring=d["feasible_offspring"],
            generation=d.get("generation", 0),
            next_island=d.get("next_island", 0),
            seeded=d.get("seeded", False),
        )


@dataclass
class RemoteBackendConfig:
    endpoint: str = ""
    model_name: str = "gpt-4o"
    temperature: float = 0.7
    reply_path: str = "choices.0.message.content"
    token_env: str = "AGENTSEARCH_API_TOKEN"
    request_timeout: float = 120.0
    max_retries: int = 2

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclass
class SearchConfig:
    """Every tunable of the search, with working defaults.

    Serialization through to_dict/from_dict is stable and is what the state
    ledger snapshots, so everything in here must stay JSON-representable.
    """

    objectives: tuple[ObjectiveSpec, ...] = field(default_factory=default_objectives)
    beta: float = 0.1
    gamma: float = 0.05
    c_puct: float = 1.5
    num_roots: int = 4
    mcts_budget: int = 100
    num_islands: int = 4
    population_size: int = 8
    ea_budget: int = 100
    elite_ratio: float = 0.5
    migration_period: int = 3
    repair_attempts: int = 3
    exec_timeout: float = 600.0
    rng_seed: int = 0
    generator_backend: str = "mock"
    search_mode: str = "full"
    task_name: str = "customer lifetime value prediction"
    attempt_cap_factor: int = 5
    seed_retry_limit: int = 2
    executor_kind: str = "subprocess"
    runtime_command: list[str] | None = None
    workdir_root: str | None = None
    stdout_cap: int = 65536
    stderr_cap: int = 16384
    env_allowlist: list[str] = field(
        default_factory=lambda: ["TRAIN_PATH", "VALID_PATH", "TEST_PATH", "SPLIT_SEED"]
    )
    keep_workdirs: bool = False
    remote: RemoteBackendConfig = field(default_factory=RemoteBackendConfig)

    def validate(self) -> "SearchConfig":
        validate_objectives(self.objectives)
        if self.beta < 0 or self.gamma < 0:
            raise ConfigurationError("beta and gamma must be >= 0")
        if not (self.c_puct > 0):
            raise ConfigurationError(f"c_puct must be > 0, got {self.c_puct!r}")
        for name in ("num_roots", "mcts_budget", "num_islands", "population_size", "ea_budget"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.mcts_budget < self.num_roots:
            raise ConfigurationError(
                "mcts_budget must be >= num_roots (roots count toward the feasible budget)"
            )
        if not (0.0 < self.elite_ratio <= 1.0):
            raise ConfigurationError(f"elite_ratio must be in (0, 1], got {self.elite_ratio!r}")
        if not isinstance(self.migration_period, int) or self.migration_period < 1:
            raise ConfigurationError("migration_period must be a positive integer")
        if not isinstance(self.repair_attempts, int) or self.repair_attempts < 0:
            raise ConfigurationError("repair_attempts must be a non-negative integer")
        if not (self.exec_timeout > 0):
            raise ConfigurationError("exec_timeout must be > 0")
        if self.generator_backend not in ("remote", "mock"):
            raise ConfigurationError(
                f"generator_backend must be 'remote' or 'mock', got {self.generator_backend!r}"
            )
        if self.search_mode not in ("full", "no-mcts", "no-ea"):
            raise ConfigurationError(
                f"search_mode must be 'full', 'no-mcts', or 'no-ea', got {self.search_mode!r}"
            )
        if self.executor_kind not in ("subprocess", "inline"):
            raise ConfigurationError(
                f"executor_kind must be 'subprocess' or 'inline', got {self.executor_kind!r}"
            )
        if self.attempt_cap_factor < 1:
            raise ConfigurationError("attempt_cap_factor must be >= 1")
        if self.stdout_cap < 1024 or self.stderr_cap < 256:
            raise ConfigurationError("output caps are unreasonably small")
        return self

    def weights(self) -> list[float]:
        return [o.weight for o in self.objectives]

    def to_dict(self):
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "objectives":
                d[f.name] = [o.to_dict() for o in v]
            elif f.name == "remote":
                d[f.name] = v.to_dict()
            elif isinstance(v, list):
                d[f.name] = list(v)
            else:
                d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "objectives" in kwargs:
            kwargs["objectives"] = tuple(
                ObjectiveSpec.from_dict(o) for o in kwargs["objectives"]
            )
        if "remote" in kwargs:
            kwargs["remote"] = RemoteBackendConfig.from_dict(kwargs["remote"])
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from exc
        return cfg.validate()

    def with_overrides(self, overrides: dict[str, str]) -> "SearchConfig":
        """Apply dotted-path overrides like {"mcts_budget": "10", "remote.model_name": "x"}.

        Values are parsed as JSON when possible, otherwise taken as strings.
        Only keys that already exist in the config may be touched.
        """
        d = self.to_dict()
        for path, raw in overrides.items():
            try:
                value = json.loads(raw)
            except (ValueError, TypeError):
                value = raw
            parts = path.split(".")
            cursor = d
            for part in parts[:-1]:
                if isinstance(cursor, list):
                    try:
                        cursor = cursor[int(part)]
                    except (ValueError, IndexError) as exc:
                        raise ConfigurationError(f"bad override path {path!r}") from exc
                elif isinstance(cursor, dict) and part in cursor:
                    cursor = cursor[part]
                else:
                    raise ConfigurationError(f"unknown config key in override {path!r}")
            leaf = parts[-1]
            if isinstance(cursor, list):
                try:
                    cursor[int(leaf)] = value
                except (ValueError, IndexError) as exc:
                    raise ConfigurationError(f"bad override path {path!r}") from exc
            elif isinstance(cursor, dict) and leaf in cursor:
                cursor[leaf] = value
            else:
                raise ConfigurationError(f"unknown config key in override {path!r}")
        return SearchConfig.from_dict(d)


@dataclass
class RunState:
    """Complete, serializable snapshot of a run.

    Everything a resumed process needs lives here: the config, both phase
    structures, counters for budget accounting and rng replay, and the event
    log. Event timestamps are logical ticks (event list positions), never
    wall-clock, so ledgers from identical runs are byte-identical.
    """

    config: SearchConfig
    phase: str = PHASE_MCTS
    next_id: int = 1
    rng_draws: int = 0
    mcts_attempts: int = 0
    ea_attempts: int = 0
    tree: SearchTree | None = None
    evolution: EvolutionState | None = None
    c_mcts_id: int | None = None
    c_star_id: int | None = None
    events: list[dict] = field(default_factory=list)

    def node(self, node_id: int) -> CandidateNode:
        if self.tree is not None and node_id in self.tree.nodes:
            return self.tree.nodes[node_id]
        if self.evolution is not None and node_id in self.evolution.nodes:
            return self.evolution.nodes[node_id]
        raise ConfigurationError(f"unknown node id {node_id}")

    def log(self, kind: str, **fields) -> None:
        event = {"tick": len(self.events), "kind": kind, "rng_draws": self.rng_draws}
        event.update(fields)
        self.events.append(event)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "phase": self.phase,
            "next_id": self.next_id,
            "rng_draws": self.rng_draws,
            "mcts_attempts": self.mcts_attempts,
            "ea_attempts": self.ea_attempts,
            "tree": self.tree.to_dict() if self.tree else None,
            "evolution": self.evolution.to_dict() if self.evolution else None,
            "c_mcts_id": self.c_mcts_id,
            "c_star_id": self.c_star_id,
            "events": [dict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunState":
        return cls(
            config=SearchConfig.from_dict(d["config"]),
            phase=d["phase"],
            next_id=d["next_id"],
            rng_draws=d["rng_draws"],
            mcts_attempts=d.get("mcts_attempts", 0),
            ea_attempts=d.get("ea_attempts", 0),
            tree=SearchTree.from_dict(d["tree"]) if d.get("tree") else None,
            evolution=EvolutionState.from_dict(d["evolution"]) if d.get("evolution") else None,
            c_mcts_id=d.get("c_mcts_id"),
            c_star_id=d.get("c_star_id"),
            events=[dict(e) for e in d.get("events", [])],
        )
