"""Sandboxed candidate execution and the repair loop.

Candidates run as plain Python programs in a throwaway working directory
with a scrubbed environment and a hard wall-clock limit. The executor only
reports what happened; deciding feasibility and budget accounting is the
caller's job.
"""

from __future__ import annotations

import contextlib
import io
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import traceback
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .core import Lineage, MetricVector, ProgramSource
from .errors import BackendError, GenerationError, UnparseableOutputError
from .metrics import parse_metric_output

STATUS_OK = "ok"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"
STATUS_UNPARSEABLE = "unparseable_output"

TRUNCATION_MARKER = "\n...[output truncated]\n"


@dataclass(frozen=True)
class ExecutionLimits:
    wall_clock: float = 600.0
    stdout_cap: int = 65536
    stderr_cap: int = 16384


@dataclass
class ExecutionResult:
    status: str
    metrics: MetricVector | None = None
    stdout: str = ""
    stderr: str = ""
    exit_code: int | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def _truncate_stdout(text: str, cap: int) -> str:
    """Cap stdout, cutting at the last newline inside the cap so the final
    kept line stays parseable."""
    if len(text) <= cap:
        return text
    cut = text.rfind("\n", 0, cap + 1)
    if cut < 0:
        cut = cap
    return text[: cut + 1] + TRUNCATION_MARKER


def _truncate_stderr(text: str, cap: int) -> str:
    """Cap stderr keeping the tail, where tracebacks end."""
    if len(text) <= cap:
        return text
    return TRUNCATION_MARKER + text[-cap:]


def _parse_or_unparseable(stdout: str, stderr: str, exit_code: int | None) -> ExecutionResult:
    try:
        metrics = parse_metric_output(stdout)
    except UnparseableOutputError as exc:
        return ExecutionResult(
            status=STATUS_UNPARSEABLE,
            stdout=stdout,
            stderr=stderr,
            exit_code=exit_code,
            detail=str(exc),
        )
    return ExecutionResult(
        status=STATUS_OK, metrics=metrics, stdout=stdout, stderr=stderr, exit_code=exit_code
    )


class LocalExecutor:
    """Runs candidate source in a fresh subprocess per execution.

    Each run gets its own temporary working directory and an environment
    reduced to an explicit allowlist plus per-run extras. Runs are strictly
    sequential; candidate programs are free to use every core themselves,
    and sequencing keeps execution order (and therefore archives, rewards,
    and ledgers) reproducible.
    """

    def __init__(
        self,
        limits: ExecutionLimits | None = None,
        runtime_command: Sequence[str] | None = None,
        env_allowlist: Sequence[str] = (),
        extra_env: dict[str, str] | None = None,
        workdir_root: str | None = None,
        keep_workdirs: bool = False,
    ):
        self.limits = limits or ExecutionLimits()
        self.runtime_command = list(runtime_command) if runtime_command else [sys.executable]
        self.env_allowlist = tuple(env_allowlist)
        self.extra_env = dict(extra_env or {})
        self.workdir_root = workdir_root
        self.keep_workdirs = keep_workdirs

    def _build_env(self) -> dict[str, str]:
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin")}
        for key in self.env_allowlist:
            if key in os.environ:
                env[key] = os.environ[key]
        env.update(self.extra_env)
        return env

    def execute(self, source_text: str) -> ExecutionResult:
        workdir = tempfile.mkdtemp(prefix="cand-", dir=self.workdir_root)
        try:
            script = os.path.join(workdir, "candidate.py")
            with open(script, "w", encoding="utf-8") as fh:
                fh.write(source_text)
            out_path = os.path.join(workdir, "stdout.txt")
            err_path = os.path.join(workdir, "stderr.txt")
            limit = self.limits.wall_clock
            with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
                proc = subprocess.Popen(
                    self.runtime_command + [script],
                    cwd=workdir,
                    env=self._build_env(),
                    stdout=out_fh,
                    stderr=err_fh,
                    stdin=subprocess.DEVNULL,
                    start_new_session=True,
                )
                # A timer thread enforces the deadline so the main wait can
                # block in waitpid instead of sleep-polling (Popen.wait with
                # a timeout burns ~20ms per call in backoff sleeps).
                expired = threading.Event()

                def _kill_group():
                    expired.set()
                    with contextlib.suppress(ProcessLookupError, PermissionError):
                        os.killpg(proc.pid, signal.SIGKILL)

                timer = threading.Timer(limit, _kill_group)
                timer.daemon = True
                timer.start()
                try:
                    exit_code = proc.wait()
                finally:
                    timer.cancel()
                timed_out = expired.is_set()
                if timed_out:
                    exit_code = None

            stdout = _truncate_stdout(
                _read_text(out_path), self.limits.stdout_cap
            )
            stderr = _truncate_stderr(_read_text(err_path), self.limits.stderr_cap)

            if timed_out:
                return ExecutionResult(
                    status=STATUS_TIMEOUT,
                    stdout=stdout,
                    stderr=stderr,
                    exit_code=None,
                    detail=f"wall clock limit of {limit:g}s exceeded",
                )
            if exit_code != 0:
                return ExecutionResult(
                    status=STATUS_RUNTIME_ERROR,
                    stdout=stdout,
                    stderr=stderr,
                    exit_code=exit_code,
                    detail=f"process exited with code {exit_code}",
                )
            return _parse_or_unparseable(stdout, stderr, exit_code)
        finally:
            if not self.keep_workdirs:
                shutil.rmtree(workdir, ignore_errors=True)


def _read_text(path: str) -> str:
    with open(path, "rb") as fh:
        return fh.read().decode("utf-8", errors="replace")


class InlineExecutor:
    """Executes candidate source in this process via exec().

    Much faster than a subprocess but with no isolation and no timeout:
    only for trusted sources such as the bundled mock family or tests.
    """

    def __init__(self, limits: ExecutionLimits | None = None):
        self.limits = limits or ExecutionLimits()

    def execute(self, source_text: str) -> ExecutionResult:
        buffer = io.StringIO()
        namespace = {"__name__": "__main__"}
        try:
            with contextlib.redirect_stdout(buffer):
                exec(compile(source_text, "<candidate>", "exec"), namespace)
        except SystemExit as exc:
            code = exc.code if isinstance(exc.code, int) else 1
            if code:
                return ExecutionResult(
                    status=STATUS_RUNTIME_ERROR,
                    stdout=_truncate_stdout(buffer.getvalue(), self.limits.stdout_cap),
                    stderr=f"SystemExit: {exc.code!r}",
                    exit_code=code,
                    detail=f"process exited with code {code}",
                )
        except BaseException:
            return ExecutionResult(
                status=STATUS_RUNTIME_ERROR,
                stdout=_truncate_stdout(buffer.getvalue(), self.limits.stdout_cap),
                stderr=_truncate_stderr(traceback.format_exc(), self.limits.stderr_cap),
                exit_code=1,
                detail="candidate raised",
            )
        stdout = _truncate_stdout(buffer.getvalue(), self.limits.stdout_cap)
        return _parse_or_unparseable(stdout, "", 0)


def make_executor(config) -> "LocalExecutor | InlineExecutor":
    """Build the executor described by a SearchConfig."""
    limits = ExecutionLimits(
        wall_clock=config.exec_timeout,
        stdout_cap=config.stdout_cap,
        stderr_cap=config.stderr_cap,
    )
    if config.executor_kind == "inline":
        return InlineExecutor(limits)
    return LocalExecutor(
        limits=limits,
        runtime_command=config.runtime_command,
        env_allowlist=config.env_allowlist,
        workdir_root=config.workdir_root,
        keep_workdirs=config.keep_workdirs,
    )


def _failure_trace(result: ExecutionResult) -> str:
    parts = [f"status: {result.status}", result.detail]
    if result.stderr.strip():
        parts.append("stderr:\n" + result.stderr.strip())
    elif result.stdout.strip():
        parts.append("stdout:\n" + result.stdout.strip())
    return "\n".join(p for p in parts if p)


@dataclass
class RepairOutcome:
    program: ProgramSource
    result: ExecutionResult
    repairs_used: int
    attempts: list[ExecutionResult] = field(default_factory=list)


def execute_with_repair(
    program: ProgramSource,
    executor,
    repair: Callable[[str, str, int], str],
    repair_attempts: int,
    take_id: Callable[[], int],
    event_sink: Callable[[str, dict], None] | None = None,
) -> RepairOutcome:
    """Run a candidate, asking the generator to fix it on failure.

    Up to ``repair_attempts`` repaired versions are executed after the
    initial failure; each repaired version becomes a new ProgramSource with
    repair lineage. If the repair generator itself fails, the last execution
    result before that point stands so the search can mark the candidate
    infeasible instead of crashing the run.
    """
    current = program
    result = executor.execute(current.source_text)
    attempts = [result]
    used = 0
    while not result.ok and used < repair_attempts:
        trace = _failure_trace(result)
        try:
            fixed_source = repair(current.source_text, trace, used + 1)
        except (BackendError, GenerationError) as exc:
            if event_sink:
                event_sink("repair_backend_failed", {"node": program.id, "error": str(exc)})
            break
        used += 1
        current = ProgramSource(
            id=take_id(),
            source_text=fixed_source,
            lineage=Lineage(kind="repair", parents=(current.id,), hint=f"attempt {used}"),
            label=program.label,
        )
        result = executor.execute(current.source_text)
        attempts.append(result)
        if event_sink:
            event_sink(
                "repair_attempt",
                {"node": program.id, "attempt": used, "status": result.status},
            )
    return RepairOutcome(program=current, result=result, repairs_used=used, attempts=attempts)
