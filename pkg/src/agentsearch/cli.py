"""Command-line surface for the search orchestrator.

Commands: full, mcts, evolve, report, export-tree, validate-config. Every
failure prints one machine-parseable JSON line to stderr and exits with the
category's code (1 config, 2 backend, 3 budget, 4 persistence, 130 after an
interrupt). SIGINT is honored at iteration boundaries: the run state is
saved before exiting, and rerunning the same command resumes it.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys

from .core import PHASE_DONE, PHASE_EA, PHASE_MCTS, RunState, SearchConfig
from .errors import (
    AgentSearchError,
    ConfigurationError,
    EXIT_INTERRUPT,
    EXIT_OK,
    InterruptRequested,
)
from .evolution import run_evolution
from .mcts import run_mcts, run_roots_only
from .reporting import (
    STATE_SUFFIX,
    export_tree,
    leaderboard,
    load_state,
    render_leaderboard_csv,
    render_leaderboard_text,
    save_state,
)
from .session import SearchSession, build_session

DEFAULT_STATE_PATH = "run" + STATE_SUFFIX


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentsearch",
        description="Search and evolve executable prediction pipelines.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (dotted paths allowed, repeatable)",
    )
    common.add_argument("--seed", type=int, help="shorthand for --set rng_seed=N")
    common.add_argument(
        "--backend",
        choices=("mock", "remote"),
        help="shorthand for --set generator_backend=...",
    )
    common.add_argument(
        "--state",
        default=DEFAULT_STATE_PATH,
        help=f"run state file (default {DEFAULT_STATE_PATH})",
    )

    sub = parser.add_subparsers(dest="command", required=True)
    run_full = sub.add_parser("full", parents=[common], help="run tree phase then islands")
    run_full.add_argument(
        "--mode",
        choices=("full", "no-mcts", "no-ea"),
        help="shorthand for --set search_mode=... (ablation diets)",
    )
    sub.add_parser("mcts", parents=[common], help="run the tree phase only")
    sub.add_parser("evolve", parents=[common], help="run the island phase of a saved run")

    report = sub.add_parser("report", parents=[common], help="print the leaderboard")
    report.add_argument("--top-n", type=int, default=20)
    report.add_argument("--format", choices=("text", "csv"), default="text")
    report.add_argument("--out", help="write to a file instead of stdout")

    export = sub.add_parser("export-tree", parents=[common], help="export the search tree")
    export.add_argument("--format", choices=("dot", "json"), default="dot")
    export.add_argument("--out", help="write to a file instead of stdout")

    sub.add_parser(
        "validate-config", parents=[common], help="check config and echo the effective JSON"
    )
    return parser


def _config_was_given(args) -> bool:
    return bool(
        args.config
        or args.overrides
        or args.seed is not None
        or args.backend is not None
        or getattr(args, "mode", None) is not None
    )


def _effective_config(args) -> SearchConfig:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"config file {args.config} is not valid JSON: {exc}"
            ) from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {args.config} must hold a JSON object")
        config = SearchConfig.from_dict(raw)
    else:
        config = SearchConfig().validate()

    overrides: dict[str, str] = {}
    for pair in args.overrides:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {pair!r}")
        overrides[key] = value
    if args.seed is not None:
        overrides["rng_seed"] = str(args.seed)
    if args.backend is not None:
        overrides["generator_backend"] = args.backend
    if getattr(args, "mode", None) is not None:
        overrides["search_mode"] = args.mode
    if overrides:
        config = config.with_overrides(overrides)
    return config


class _SigintFlag:
    def __init__(self):
        self.triggered = False

    def __call__(self, signum, frame):
        self.triggered = True


def _checkpoint_for(flag: _SigintFlag):
    def checkpoint(state: RunState) -> None:
        if flag.triggered:
            raise InterruptRequested("interrupt requested")

    return checkpoint


def _advance(session: SearchSession) -> None:
    """Run whatever remains of the configured pipeline."""
    state = session.state
    mode = session.config.search_mode
    if state.phase == PHASE_MCTS:
        if mode == "no-mcts":
            run_roots_only(session)
        else:
            run_mcts(session)
        if mode == "no-ea" and state.phase == PHASE_EA:
            state.c_star_id = state.c_mcts_id
            state.phase = PHASE_DONE
            session.log("ea_skipped", best=state.c_star_id)
    if state.phase == PHASE_EA:
        run_evolution(session)


def _load_or_create_state(args, for_resume_only: bool = False) -> tuple[SearchConfig, RunState | None]:
    """Resolve the (config, prior state) pair for a run command.

    A pre-existing state file wins: its stored config is authoritative, and
    any config given on the command line must match it exactly (so rerunning
    the interrupted command resumes instead of forking the run).
    """
    if os.path.exists(args.state):
        state = load_state(args.state)
        if _config_was_given(args):
            given = _effective_config(args)
            if given.to_dict() != state.config.to_dict():
                raise ConfigurationError(
                    f"state file {args.state} was created with a different config; "
                    "drop the config flags to resume it or point --state elsewhere"
                )
        return state.config, state
    if for_resume_only:
        raise ConfigurationError(f"no run state at {args.state}; run mcts or full first")
    return _effective_config(args), None


def _summarize(state: RunState) -> str:
    parts = [f"phase={state.phase}"]
    if state.tree is not None:
        parts.append(f"feasible={state.tree.feasible_count}")
    if state.c_mcts_id is not None:
        node = state.node(state.c_mcts_id)
        parts.append(f"tree champion {node.id} (Q={node.value:.6f})")
    if state.c_star_id is not None:
        node = state.node(state.c_star_id)
        value = node.fitness if node.fitness is not None else node.value
        parts.append(f"final champion {node.id} (value={value:.6f})")
    return ", ".join(parts)


def _cmd_full(args) -> int:
    config, state = _load_or_create_state(args)
    return _run_session(config, state, args.state, _advance)


def _run_session(config, state, state_path, phases) -> int:
    flag = _SigintFlag()
    session = build_session(config, state=state, checkpoint=_checkpoint_for(flag))
    previous = signal.signal(signal.SIGINT, flag)
    try:
        phases(session)
    except InterruptRequested:
        session.sync()
        save_state(session.state, state_path)
        print(
            json.dumps({"error": "interrupted", "reason": f"state saved to {state_path}"}),
            file=sys.stderr,
        )
        return EXIT_INTERRUPT
    finally:
        signal.signal(signal.SIGINT, previous)
    session.sync()
    save_state(session.state, state_path)
    print(f"{_summarize(session.state)}; state written to {state_path}")
    return EXIT_OK


def _cmd_mcts(args) -> int:
    config, state = _load_or_create_state(args)
    if state is not None and state.phase != PHASE_MCTS:
        print(f"tree phase already complete: {_summarize(state)}")
        return EXIT_OK

    def phases(session):
        if session.config.search_mode == "no-mcts":
            run_roots_only(session)
        else:
            run_mcts(session)

    return _run_session(config, state, args.state, phases)


def _cmd_evolve(args) -> int:
    config, state = _load_or_create_state(args, for_resume_only=True)
    if state.phase == PHASE_MCTS:
        raise ConfigurationError(
            'run is still in phase "mcts"; finish the tree phase before evolve'
        )
    if state.phase == PHASE_DONE:
        print(f"run already complete: {_summarize(state)}")
        return EXIT_OK
    return _run_session(config, state, args.state, run_evolution)


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_report(args) -> int:
    state = load_state(args.state)
    rows = leaderboard(state, args.top_n)
    render = render_leaderboard_csv if args.format == "csv" else render_leaderboard_text
    _write_or_print(render(rows), args.out)
    return EXIT_OK


def _cmd_export_tree(args) -> int:
    state = load_state(args.state)
    if state.tree is None:
        raise ConfigurationError(f"state file {args.state} holds no search tree yet")
    _write_or_print(export_tree(state.tree, args.format), args.out)
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    config = _effective_config(args)
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "full": _cmd_full,
    "mcts": _cmd_mcts,
    "evolve": _cmd_evolve,
    "report": _cmd_report,
    "export-tree": _cmd_export_tree,
    "validate-config": _cmd_validate_config,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AgentSearchError as exc:
        print(json.dumps({"error": exc.category, "reason": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print(json.dumps({"error": "interrupted", "reason": "no state saved"}), file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
