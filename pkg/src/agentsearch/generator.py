"""Candidate generation: prompt rendering, reply parsing, and backends.

Prompts are data assets rendered by literal slot substitution. A backend
turns a rendered prompt into a reply string; the mock backend is a pure
function of (role, prompt, seed) so whole runs replay byte for byte,
while the remote backend talks to an HTTP chat-completion service.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Protocol, Sequence

from . import template_family
from .core import RemoteBackendConfig
from .errors import BackendError, ConfigurationError, GenerationError, TemplateError

ROLES = (
    "code_gen",
    "adviser",
    "expert_select",
    "expert_apply",
    "fixer",
    "crossover",
    "mutate",
    "format_idea",
)

# Slots each template declares. Braces outside this set (such as the
# literal ``{score}`` inside required print statements) pass through
# rendering untouched.
TEMPLATE_SLOTS: dict[str, tuple[str, ...]] = {
    "code_gen": ("task_name", "method_hint"),
    "adviser": ("code1", "code2"),
    "crossover": ("comparison", "score1", "code1", "score2", "code2"),
    "format_idea": ("idea",),
    "expert_select": ("code", "advice_options", "advice_count"),
    "expert_apply": ("advice_name", "advice_text", "code"),
    "fixer": ("attempt", "code", "error_trace"),
    "mutate": ("mutation_hint", "code"),
}

DEFAULT_METHOD_HINT = "Improve this code to achieve a better score."

MATCH_WEIGHT = 0.5


@lru_cache(maxsize=None)
def _template_text(role: str) -> str:
    path = resources.files("agentsearch.assets").joinpath("templates").joinpath(role + ".txt")
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"no template asset for role {role!r}") from exc


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt plus the role and slot values that produced it."""

    role: str
    text: str
    slots: tuple[tuple[str, str], ...]


def render_prompt(role: str, **slots: object) -> PromptBundle:
    """Render the template for ``role`` by literal slot replacement.

    Only declared slots are substituted, in a single pass, so slot values
    containing brace patterns are never re-expanded. Missing or undeclared
    slot names raise :class:`TemplateError`.
    """
    declared = TEMPLATE_SLOTS.get(role)
    if declared is None:
        raise TemplateError(f"unknown prompt role {role!r}")
    missing = [name for name in declared if name not in slots]
    if missing:
        raise TemplateError(f"role {role!r} missing slots: {', '.join(missing)}")
    extra = [name for name in slots if name not in declared]
    if extra:
        raise TemplateError(f"role {role!r} does not declare slots: {', '.join(extra)}")

    values = {name: str(slots[name]) for name in declared}
    if role == "code_gen" and not values["method_hint"].strip():
        values["method_hint"] = DEFAULT_METHOD_HINT

    pattern = re.compile("|".join(r"\{" + re.escape(name) + r"\}" for name in declared))
    text = pattern.sub(lambda m: values[m.group(0)[1:-1]], _template_text(role))
    return PromptBundle(role=role, text=text, slots=tuple(sorted(values.items())))


_FENCE_RE = re.compile(r"```python[ \t]*\n(.*?)```", re.DOTALL)


def extract_code(reply: str) -> str:
    """Pull candidate source out of a backend reply.

    The last ```python fence wins; a reply without fences is taken whole.
    An empty result is a generation failure, not an empty candidate.
    """
    blocks = _FENCE_RE.findall(reply)
    body = blocks[-1] if blocks else reply
    body = body.strip()
    if not body:
        raise GenerationError("backend reply contained no candidate source")
    return body + "\n"


@dataclass(frozen=True)
class AdviceEntry:
    id: int
    name: str
    advice: str


MIN_ADVICE_ENTRIES = 27


def load_advice_library(path: str | None = None) -> tuple[AdviceEntry, ...]:
    """Load and validate the bundled advice library (or one at ``path``)."""
    if path is None:
        raw = resources.files("agentsearch.assets").joinpath("advice_library.json").read_text(
            encoding="utf-8"
        )
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    try:
        doc = json.loads(raw)
        entries = [
            AdviceEntry(id=int(e["id"]), name=str(e["name"]), advice=str(e["advice"]))
            for e in doc["entries"]
        ]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"malformed advice library: {exc}") from exc
    entries.sort(key=lambda e: e.id)
    if len(entries) < MIN_ADVICE_ENTRIES:
        raise ConfigurationError(
            f"advice library has {len(entries)} entries, needs at least {MIN_ADVICE_ENTRIES}"
        )
    for position, entry in enumerate(entries, start=1):
        if entry.id != position:
            raise ConfigurationError(
                f"advice ids must be contiguous from 1, found {entry.id} at position {position}"
            )
        if not entry.name.strip() or not entry.advice.strip():
            raise ConfigurationError(f"advice entry {entry.id} has an empty name or body")
    return tuple(entries)


_INDEX_REPLY_RE = re.compile(r"[\(\[]?(\d{1,4})[\)\]]?\.?")


def score_advice(reply: str, count: int) -> list[float]:
    """Turn an expert-selection reply into a probability vector of length ``count``.

    A bare index k concentrates weight 0.5 on option k with the remainder
    spread uniformly; a JSON array of ``count`` numbers is softmaxed; anything
    else falls back to the uniform distribution.
    """
    if count < 1:
        raise ConfigurationError("cannot score an empty option list")
    if count == 1:
        return [1.0]
    stripped = reply.strip()

    match = _INDEX_REPLY_RE.fullmatch(stripped)
    if match:
        index = int(match.group(1))
        if 1 <= index <= count:
            rest = (1.0 - MATCH_WEIGHT) / (count - 1)
            return [MATCH_WEIGHT if i == index else rest for i in range(1, count + 1)]

    try:
        parsed = json.loads(stripped)
    except json.JSONDecodeError:
        parsed = None
    if (
        isinstance(parsed, list)
        and len(parsed) == count
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in parsed)
        and all(math.isfinite(float(v)) for v in parsed)
    ):
        peak = max(float(v) for v in parsed)
        exps = [math.exp(float(v) - peak) for v in parsed]
        total = sum(exps)
        return [v / total for v in exps]

    return [1.0 / count] * count


_SUGGESTION_MARK_RE = re.compile(r"^\s*(?:\d+[\.\)]|[-*•])\s+(.*)$")


def split_suggestions(reply: str, limit: int = 5) -> list[str]:
    """Split an advice reply into at most ``limit`` distinct suggestion texts."""
    blocks: list[str] = []
    current: list[str] | None = None
    for line in reply.splitlines():
        mark = _SUGGESTION_MARK_RE.match(line)
        if mark:
            if current:
                blocks.append(" ".join(current))
            current = [mark.group(1).strip()]
        elif line.strip():
            if current is not None:
                current.append(line.strip())
        else:
            if current:
                blocks.append(" ".join(current))
            current = None
    if current:
        blocks.append(" ".join(current))

    if not blocks:
        whole = " ".join(reply.split())
        blocks = [whole] if whole else []

    seen: set[str] = set()
    out: list[str] = []
    for block in blocks:
        key = " ".join(block.casefold().split())
        if key and key not in seen:
            seen.add(key)
            out.append(block)
        if len(out) == limit:
            break
    if not out:
        out = [DEFAULT_METHOD_HINT]
    return out


def format_options(options: Sequence[str]) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(options, start=1))


class GeneratorBackend(Protocol):
    def complete(self, role: str, prompt: str) -> str: ...


class MockBackend:
    """Deterministic offline backend over the bundled pipeline family.

    Every reply is a pure function of (role, rendered prompt, seed): the
    prompt is hashed, and the digest drives a table-free choice among the
    family's parameter grid and edit moves. Replies carry real, runnable
    candidate sources so the whole search stack can be exercised without
    a network.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _digest(self, role: str, prompt: str) -> int:
        material = f"{self.seed}\n{role}\n{prompt}".encode("utf-8")
        return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")

    def complete(self, role: str, prompt: str) -> str:
        digest = self._digest(role, prompt)
        handler = getattr(self, "_reply_" + role, None)
        if handler is None:
            raise BackendError(f"mock backend has no handler for role {role!r}")
        return handler(prompt, digest)

    @staticmethod
    def _fenced(source: str) -> str:
        return "Here is the implementation:\n```python\n" + source + "```\n"

    @staticmethod
    def _params_in(prompt: str) -> list[dict]:
        found = []
        for match in template_family.PARAMS_RE.finditer(prompt):
            try:
                found.append(template_family.normalize_params(json.loads(match.group(1))))
            except (ValueError, KeyError, TypeError):
                continue
        return found

    def _reply_code_gen(self, prompt: str, digest: int) -> str:
        params = template_family.params_from_digest(digest)
        return self._fenced(template_family.render_candidate(params))

    def _edited(self, prompt: str, digest: int) -> str:
        found = self._params_in(prompt)
        base = found[-1] if found else template_family.default_params()
        move = template_family.parse_move(prompt)
        new = template_family.perturb(base, move) if move is not None else None
        if new is None or template_family.params_key(new) == template_family.params_key(base):
            moves = template_family.possible_moves(base)
            new = template_family.perturb(base, moves[digest % len(moves)])
        return self._fenced(template_family.render_candidate(new))

    _reply_expert_apply = _edited
    _reply_mutate = _edited

    def _reply_crossover(self, prompt: str, digest: int) -> str:
        found = self._params_in(prompt)
        if len(found) >= 2:
            params = template_family.mix_params(found[0], found[1], digest)
        elif len(found) == 1:
            moves = template_family.possible_moves(found[0])
            params = template_family.perturb(found[0], moves[digest % len(moves)])
        else:
            params = template_family.params_from_digest(digest)
        return self._fenced(template_family.render_candidate(params))

    def _reply_fixer(self, prompt: str, digest: int) -> str:
        found = self._params_in(prompt)
        params = found[-1] if found else template_family.default_params()
        return self._fenced(template_family.render_candidate(params))

    def _reply_adviser(self, prompt: str, digest: int) -> str:
        found = self._params_in(prompt)
        params = found[-1] if found else template_family.default_params()
        moves = template_family.possible_moves(params)
        picks: list[int] = []
        probe = digest
        while len(picks) < min(3, len(moves)):
            index = probe % len(moves)
            while index in picks:
                index = (index + 1) % len(moves)
            picks.append(index)
            probe //= max(len(moves), 2)
        lines = [
            f"{i}. {template_family.describe_move(moves[index])}."
            for i, index in enumerate(picks, start=1)
        ]
        return "\n".join(lines) + "\n"

    _COUNT_RE = re.compile(r"\(1-(\d+)\)")

    def _reply_expert_select(self, prompt: str, digest: int) -> str:
        match = self._COUNT_RE.search(prompt)
        count = int(match.group(1)) if match else 1
        return str(1 + digest % max(count, 1))

    _IDEA_MARK = "Idea to format:\n"

    def _reply_format_idea(self, prompt: str, digest: int) -> str:
        at = prompt.rfind(self._IDEA_MARK)
        idea = prompt[at + len(self._IDEA_MARK):].strip() if at >= 0 else prompt.strip()
        return (
            "<description>\n"
            f"{idea}\n"
            "</description>\n"
            "<steps>\n"
            f"1. {idea}\n"
            "2. Re-run the pipeline and compare the printed score.\n"
            "</steps>\n"
            "<notes>\n"
            "Small, reversible change; cheap to evaluate.\n"
            "</notes>\n"
        )


class RemoteBackend:
    """HTTP chat-completion client with bounded retries.

    Connection errors, timeouts, 429 and 5xx responses are retried with
    exponential backoff up to ``max_retries`` extra attempts; other HTTP
    errors fail immediately. The reply text is pulled from the response
    JSON by the configured dotted path.
    """

    def __init__(self, config: RemoteBackendConfig, session=None, sleep=time.sleep):
        if not config.endpoint:
            raise ConfigurationError("remote backend requires an endpoint URL")
        self.config = config
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._sleep = sleep

    def complete(self, role: str, prompt: str) -> str:
        import requests

        cfg = self.config
        payload = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.token_env, "")
        if token:
            headers["Authorization"] = "Bearer " + token

        attempts = cfg.max_retries + 1
        last_status: int | None = None
        last_error = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                self._sleep(2.0 ** (attempt - 1))
            try:
                response = self._session.post(
                    cfg.endpoint, json=payload, headers=headers, timeout=cfg.request_timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            last_status = response.status_code
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code >= 400:
                raise BackendError(
                    f"backend rejected {role} request: HTTP {response.status_code}",
                    status=response.status_code,
                    attempts=attempt + 1,
                )
            return self._extract_reply(response)
        raise BackendError(
            f"backend unreachable for {role} request after {attempts} attempts: {last_error}",
            status=last_status,
            attempts=attempts,
        )

    def _extract_reply(self, response) -> str:
        try:
            node = response.json()
        except ValueError as exc:
            raise BackendError(f"backend reply is not JSON: {exc}") from exc
        for part in self.config.reply_path.split("."):
            try:
                node = node[int(part)] if part.lstrip("-").isdigit() else node[part]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(
                    f"backend reply missing {self.config.reply_path!r} at {part!r}"
                ) from exc
        if not isinstance(node, str) or not node.strip():
            raise BackendError("backend reply text is empty")
        return node


def make_backend(config) -> GeneratorBackend:
    """Build the backend named by ``config.generator_backend``."""
    if config.generator_backend == "mock":
        return MockBackend(seed=config.rng_seed)
    if config.generator_backend == "remote":
        return RemoteBackend(config.remote)
    raise ConfigurationError(f"unknown generator backend {config.generator_backend!r}")


def make_generator(config) -> "CandidateGenerator":
    """Build the candidate generator described by a SearchConfig."""
    return CandidateGenerator(make_backend(config))


class CandidateGenerator:
    """Role-oriented facade over a backend plus the advice library."""

    def __init__(self, backend: GeneratorBackend, advice: Sequence[AdviceEntry] | None = None):
        self.backend = backend
        self.advice = tuple(advice) if advice is not None else load_advice_library()

    def _code_reply(self, role: str, **slots: object) -> str:
        bundle = render_prompt(role, **slots)
        return extract_code(self.backend.complete(role, bundle.text))

    def generate_root(self, task_name: str, method_hint: str) -> str:
        return self._code_reply("code_gen", task_name=task_name, method_hint=method_hint)

    def apply_suggestion(self, code: str, name: str, text: str) -> str:
        return self._code_reply("expert_apply", advice_name=name, advice_text=text, code=code)

    def mutate(self, code: str, hint: str) -> str:
        return self._code_reply("mutate", mutation_hint=hint, code=code)

    def repair(self, code: str, error_trace: str, attempt: int) -> str:
        return self._code_reply("fixer", attempt=attempt, code=code, error_trace=error_trace)

    def compare(self, code1: str, code2: str) -> str:
        bundle = render_prompt("adviser", code1=code1, code2=code2)
        return self.backend.complete("adviser", bundle.text)

    def crossover(self, comparison: str, score1: float, code1: str, score2: float, code2: str) -> str:
        return self._code_reply(
            "crossover",
            comparison=comparison,
            score1=score1,
            code1=code1,
            score2=score2,
            code2=code2,
        )

    def score_options(self, code: str, options: Sequence[str]) -> list[float]:
        """Prior distribution over ``options`` for the given candidate source."""
        if not options:
            raise ConfigurationError("cannot score an empty option list")
        bundle = render_prompt(
            "expert_select",
            code=code,
            advice_options=format_options(options),
            advice_count=len(options),
        )
        reply = self.backend.complete("expert_select", bundle.text)
        return score_advice(reply, len(options))

    def format_idea(self, idea: str) -> str:
        bundle = render_prompt("format_idea", idea=idea)
        return self.backend.complete("format_idea", bundle.text).strip()

    def propose_suggestions(self, reference_code: str, node_code: str, limit: int = 5) -> list[str]:
        """Compare two candidates and return formatted improvement suggestions."""
        raw = self.compare(reference_code, node_code)
        return [self.format_idea(text) for text in split_suggestions(raw, limit=limit)]
