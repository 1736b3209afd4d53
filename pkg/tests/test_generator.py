"""Prompt rendering, reply parsing, and both generator backends."""

from __future__ import annotations

import json
import re

import pytest

from agentsearch import template_family
from agentsearch.core import RemoteBackendConfig, SearchConfig
from agentsearch.errors import BackendError, GenerationError, TemplateError
from agentsearch.generator import (
    DEFAULT_METHOD_HINT,
    ROLES,
    TEMPLATE_SLOTS,
    CandidateGenerator,
    MockBackend,
    RemoteBackend,
    _template_text,
    extract_code,
    format_options,
    load_advice_library,
    make_backend,
    render_prompt,
    score_advice,
    split_suggestions,
)


# ------------------------------------------------------------- templates


def test_every_role_has_a_template_and_all_slots_render():
    for role in ROLES:
        slots = {name: f"<{name}>" for name in TEMPLATE_SLOTS[role]}
        bundle = render_prompt(role, **slots)
        for name in TEMPLATE_SLOTS[role]:
            assert "{" + name + "}" not in bundle.text, (role, name)
            assert f"<{name}>" in bundle.text


def test_identity_render_reproduces_template_bytes():
    # substituting each slot with its own marker must be a no-op
    for role in ROLES:
        identity = {name: "{" + name + "}" for name in TEMPLATE_SLOTS[role]}
        bundle = render_prompt(role, **identity)
        assert bundle.text == _template_text(role), role


def test_undeclared_braces_survive_rendering():
    # the code-gen requirements include a literal {score} print contract
    bundle = render_prompt("code_gen", task_name="t", method_hint="h")
    assert "{score}" in bundle.text


def test_single_pass_substitution_does_not_reexpand():
    bundle = render_prompt("format_idea", idea="nest {idea} inside")
    assert bundle.text.count("nest {idea} inside") == 1


def test_missing_slot_is_a_template_error():
    with pytest.raises(TemplateError):
        render_prompt("crossover", code1="a", code2="b")


def test_undeclared_slot_is_a_template_error():
    with pytest.raises(TemplateError):
        render_prompt("format_idea", idea="x", extra="y")


def test_unknown_role_is_a_template_error():
    with pytest.raises(TemplateError):
        render_prompt("negotiator", code="x")


def test_empty_method_hint_falls_back():
    bundle = render_prompt("code_gen", task_name="t", method_hint="  ")
    assert DEFAULT_METHOD_HINT in bundle.text


# ----------------------------------------------------------- reply parsing


def test_extract_code_takes_last_fence():
    reply = "First try:\n```python\nx = 1\n```\nBetter:\n```python\nx = 2\n```\n"
    assert extract_code(reply) == "x = 2\n"


def test_extract_code_without_fence_takes_everything():
    assert extract_code("print('ok')") == "print('ok')\n"


def test_extract_code_empty_reply_fails():
    with pytest.raises(GenerationError):
        extract_code("```python\n\n```")


def test_score_advice_single_index():
    assert score_advice("2", 3) == pytest.approx([0.25, 0.5, 0.25])
    assert score_advice(" (3) ", 3) == pytest.approx([0.25, 0.25, 0.5])
    assert score_advice("[1].", 3) == pytest.approx([0.5, 0.25, 0.25])


def test_score_advice_single_option():
    assert score_advice("anything at all", 1) == [1.0]


def test_score_advice_json_array_softmax():
    got = score_advice("[1.0, 1.0, 1.0, 1.0]", 4)
    assert got == pytest.approx([0.25] * 4)
    skewed = score_advice("[5, 0, 0]", 3)
    assert skewed[0] > 0.9
    assert sum(skewed) == pytest.approx(1.0)


def test_score_advice_fallbacks_to_uniform():
    for reply in ("no idea", "[1, 2]", "[true, false, true]", "99", "[]", "{}"):
        assert score_advice(reply, 3) == pytest.approx([1 / 3] * 3)


def test_score_advice_always_a_distribution():
    import random

    rng = random.Random(6)
    pool = ["7", "[0.1, 0.9]", "word soup", "[1,2,3]", "-", "2.", "(2)"]
    for _ in range(100):
        n = rng.randint(2, 6)
        priors = score_advice(rng.choice(pool), n)
        assert len(priors) == n
        assert sum(priors) == pytest.approx(1.0, abs=1e-9)
        assert all(p > 0 for p in priors)


def test_split_suggestions_numbered_and_bulleted():
    reply = "1. Use log targets\n2) Add interactions\n- Tune regularization\n"
    assert split_suggestions(reply) == [
        "Use log targets",
        "Add interactions",
        "Tune regularization",
    ]


def test_split_suggestions_joins_continuation_lines():
    reply = "1. Use log targets\n   because heavy tails\n2. Clip outliers\n"
    assert split_suggestions(reply) == [
        "Use log targets because heavy tails",
        "Clip outliers",
    ]


def test_split_suggestions_dedupes_case_insensitively():
    reply = "1. Tune alpha\n2. TUNE ALPHA\n3. Other idea\n"
    assert split_suggestions(reply) == ["Tune alpha", "Other idea"]


def test_split_suggestions_respects_limit():
    reply = "\n".join(f"{i}. idea {i}" for i in range(1, 10))
    assert len(split_suggestions(reply, limit=5)) == 5


def test_split_suggestions_plain_prose_is_one_suggestion():
    assert split_suggestions("just try harder\nwith more features") == [
        "just try harder with more features"
    ]


def test_split_suggestions_empty_reply_falls_back():
    assert split_suggestions("") == [DEFAULT_METHOD_HINT]


def test_format_options_numbering():
    assert format_options(["a", "b"]) == "1. a\n2. b"


# ----------------------------------------------------------- advice library


def test_bundled_advice_library_is_valid():
    entries = load_advice_library()
    assert len(entries) >= 27
    assert [e.id for e in entries] == list(range(1, len(entries) + 1))
    assert all(e.name.strip() and e.advice.strip() for e in entries)


def test_advice_library_names_are_unique():
    entries = load_advice_library()
    names = [e.name for e in entries]
    assert len(set(names)) == len(names)


def test_advice_library_rejects_gaps(tmp_path):
    from agentsearch.errors import ConfigurationError

    bad = {"entries": [{"id": i, "name": f"m{i}", "advice": "x"} for i in (1, 2, 4)]}
    p = tmp_path / "advice.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(ConfigurationError):
        load_advice_library(str(p))


def test_advice_library_rejects_short_lists(tmp_path):
    from agentsearch.errors import ConfigurationError

    bad = {"entries": [{"id": 1, "name": "m", "advice": "x"}]}
    p = tmp_path / "advice.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(ConfigurationError):
        load_advice_library(str(p))


# ------------------------------------------------------------ mock backend


def test_mock_is_deterministic():
    a = MockBackend(seed=4)
    b = MockBackend(seed=4)
    prompt = render_prompt("code_gen", task_name="t", method_hint="ridge").text
    r1 = a.complete("code_gen", prompt)
    for _ in range(50):
        assert a.complete("code_gen", prompt) == r1
    assert b.complete("code_gen", prompt) == r1


def test_mock_seed_changes_replies():
    prompt = render_prompt("code_gen", task_name="t", method_hint="ridge").text
    replies = {MockBackend(seed=s).complete("code_gen", prompt) for s in range(12)}
    assert len(replies) > 1


def test_mock_code_gen_emits_valid_family_member():
    backend = MockBackend(seed=1)
    prompt = render_prompt("code_gen", task_name="t", method_hint="gbm").text
    code = extract_code(backend.complete("code_gen", prompt))
    params = template_family.parse_params(code)
    assert params is not None
    template_family.normalize_params(params)


def test_mock_mutate_changes_parameters():
    backend = MockBackend(seed=2)
    base = template_family.render_candidate(template_family.default_params())
    prompt = render_prompt("mutate", mutation_hint="try another transform", code=base).text
    code = extract_code(backend.complete("mutate", prompt))
    params = template_family.parse_params(code)
    assert params is not None
    assert template_family.params_key(params) != template_family.params_key(
        template_family.default_params()
    )


def test_mock_crossover_mixes_parents():
    backend = MockBackend(seed=3)
    a = template_family.render_candidate(
        template_family.normalize_params(
            {"features": [0, 1], "transform": "none", "reg": 0.1}
        )
    )
    b = template_family.render_candidate(
        template_family.normalize_params(
            {"features": [2, 3], "transform": "log_signed", "reg": 1.0}
        )
    )
    prompt = render_prompt(
        "crossover", comparison="c", score1=0.5, code1=a, score2=0.4, code2=b
    ).text
    code = extract_code(backend.complete("crossover", prompt))
    params = template_family.parse_params(code)
    assert params is not None
    # the child is a valid family member (mixing may or may not equal a parent)
    template_family.normalize_params(params)


def test_mock_expert_select_returns_index_in_range():
    backend = MockBackend(seed=5)
    options = ["idea one", "idea two", "idea three", "idea four"]
    prompt = render_prompt(
        "expert_select",
        code="print('x')",
        advice_options=format_options(options),
        advice_count=len(options),
    ).text
    reply = backend.complete("expert_select", prompt).strip()
    assert re.fullmatch(r"\d+", reply)
    assert 1 <= int(reply) <= len(options)


def test_mock_adviser_yields_parseable_suggestions():
    backend = MockBackend(seed=6)
    code = template_family.render_candidate(template_family.default_params())
    prompt = render_prompt("adviser", code1=code, code2=code).text
    suggestions = split_suggestions(backend.complete("adviser", prompt))
    assert 1 <= len(suggestions) <= 5


def test_mock_fixer_returns_runnable_replacement():
    backend = MockBackend(seed=7)
    prompt = render_prompt(
        "fixer", attempt=1, code="raise RuntimeError('boom')", error_trace="RuntimeError: boom"
    ).text
    code = extract_code(backend.complete("fixer", prompt))
    assert template_family.parse_params(code) is not None


def test_mock_unknown_role_is_backend_error():
    with pytest.raises(BackendError):
        MockBackend(seed=0).complete("negotiator", "hello")


def test_generator_facade_round_trip_on_mock():
    gen = CandidateGenerator(MockBackend(seed=8))
    root = gen.generate_root("task", "Method 2: something")
    assert template_family.parse_params(root) is not None
    priors = gen.score_options(root, ["a", "b", "c"])
    assert sum(priors) == pytest.approx(1.0)
    suggestions = gen.propose_suggestions(root, root)
    assert suggestions
    mutated = gen.mutate(root, suggestions[0])
    assert template_family.parse_params(mutated) is not None


def test_make_backend_dispatch():
    assert isinstance(make_backend(SearchConfig()), MockBackend)
    cfg = SearchConfig(
        generator_backend="remote",
        remote=RemoteBackendConfig(endpoint="http://example.invalid/v1"),
    )
    assert isinstance(make_backend(cfg), RemoteBackend)


# ---------------------------------------------------------- remote backend


class FakeResponse:
    def __init__(self, status_code=200, body=None):
        self.status_code = status_code
        self._body = body if body is not None else {}

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


class FakeSession:
    """Scripted stand-in for requests.Session."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def reply_body(text):
    return {"choices": [{"message": {"content": text}}]}


def remote(script, **cfg_kw):
    cfg = RemoteBackendConfig(endpoint="http://svc.test/v1/chat", **cfg_kw)
    session = FakeSession(script)
    sleeps = []
    backend = RemoteBackend(cfg, session=session, sleep=sleeps.append)
    return backend, session, sleeps


def test_remote_happy_path():
    backend, session, sleeps = remote([FakeResponse(200, reply_body("hello"))])
    assert backend.complete("code_gen", "prompt text") == "hello"
    assert len(session.calls) == 1
    call = session.calls[0]
    assert call["json"]["messages"][0]["content"] == "prompt text"
    assert call["json"]["model"] == "gpt-4o"
    assert sleeps == []


def test_remote_retries_on_server_errors():
    backend, session, sleeps = remote(
        [FakeResponse(500), FakeResponse(429), FakeResponse(200, reply_body("ok"))]
    )
    assert backend.complete("adviser", "p") == "ok"
    assert len(session.calls) == 3
    assert sleeps == [1.0, 2.0]  # exponential backoff between attempts


def test_remote_retries_on_connection_trouble():
    import requests

    backend, session, _ = remote(
        [requests.ConnectionError("refused"), FakeResponse(200, reply_body("ok"))]
    )
    assert backend.complete("mutate", "p") == "ok"
    assert len(session.calls) == 2


def test_remote_gives_up_after_retry_budget():
    backend, session, _ = remote([FakeResponse(503)] * 3, max_retries=2)
    with pytest.raises(BackendError) as err:
        backend.complete("fixer", "p")
    assert len(session.calls) == 3
    assert err.value.attempts == 3
    assert err.value.status == 503


def test_remote_client_errors_fail_fast():
    backend, session, _ = remote([FakeResponse(404)])
    with pytest.raises(BackendError) as err:
        backend.complete("code_gen", "p")
    assert len(session.calls) == 1
    assert err.value.status == 404


def test_remote_bad_reply_shapes():
    for body in ({"choices": []}, {"nope": 1}, reply_body(""), reply_body("   ")):
        backend, _, _ = remote([FakeResponse(200, body)])
        with pytest.raises(BackendError):
            backend.complete("code_gen", "p")


def test_remote_token_header_comes_from_env(monkeypatch):
    monkeypatch.setenv("AGENTSEARCH_API_TOKEN", "sk-42")
    backend, session, _ = remote([FakeResponse(200, reply_body("x"))])
    backend.complete("code_gen", "p")
    assert session.calls[0]["headers"]["Authorization"] == "Bearer sk-42"

    monkeypatch.delenv("AGENTSEARCH_API_TOKEN")
    backend, session, _ = remote([FakeResponse(200, reply_body("x"))])
    backend.complete("code_gen", "p")
    assert "Authorization" not in session.calls[0]["headers"]


def test_remote_requires_endpoint():
    from agentsearch.errors import ConfigurationError

    with pytest.raises(ConfigurationError):
        RemoteBackend(RemoteBackendConfig(endpoint=""))


def test_remote_custom_reply_path():
    backend, _, _ = remote(
        [FakeResponse(200, {"output": {"text": "deep"}})], reply_path="output.text"
    )
    assert backend.complete("code_gen", "p") == "deep"
