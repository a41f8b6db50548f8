# tests/test_llm_pipeline.py
import time

import pytest

from errors import ConfigurationError, LlmCallError, MalformedResponse
from llm_clients import LlmClient, MockLlmClient, RateLimiter, build_llm_client
from llm_pipeline import LlmCallGraph


class ScriptedClient(LlmClient):
    """Returns the scripted responses in order."""

    def __init__(self, responses, max_retries=2):
        super().__init__(name="scripted", max_retries=max_retries, timeout=0)
        self.responses = list(responses)

    def _complete(self, prompt):
        return self.responses.pop(0)


def _parse_number(raw):
    if not raw.strip().isdigit():
        raise MalformedResponse("number", raw)
    return int(raw)


def test_first_good_response_finishes_after_one_call():
    client = ScriptedClient(["42"])
    result = LlmCallGraph(client, _parse_number).run("u1", "give a number")
    assert result.ok and result.parsed == 42
    assert result.attempts == 1
    assert client.calls == 1


def test_malformed_then_good_response_retries_once():
    client = ScriptedClient(["no idea", "7"], max_retries=2)
    result = LlmCallGraph(client, _parse_number).run("u1", "give a number")
    assert result.parsed == 7
    assert result.attempts == 2


def test_budget_exhausted_returns_failure_record():
    client = ScriptedClient(["a", "b", "c"], max_retries=2)
    result = LlmCallGraph(client, _parse_number).run("u1", "give a number")
    assert not result.ok
    assert result.attempts == 2
    assert result.raw == "b"
    assert "number" in result.error
    assert client.calls == 2


def test_prompt_hash_is_recorded():
    result = LlmCallGraph(ScriptedClient(["1"]), _parse_number).run("u1", "same prompt")
    other = LlmCallGraph(ScriptedClient(["1"]), _parse_number).run("u2", "same prompt")
    assert result.prompt_hash == other.prompt_hash
    assert len(result.prompt_hash) == 64


def test_client_failures_are_wrapped_with_user_id(mocker):
    client = MockLlmClient(seed=0)
    mocker.patch.object(client, "_complete", side_effect=ConnectionError("offline"))
    with pytest.raises(LlmCallError) as exc:
        LlmCallGraph(client, _parse_number).run("u9", "anything")
    assert exc.value.user_id == "u9"


def test_mock_client_without_responder_fails():
    with pytest.raises(LlmCallError):
        MockLlmClient().complete("no known marker here", user_id="u1")


def test_openai_client_requires_api_key(monkeypatch, make_config):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    config = make_config('llm.name="openai"')
    with pytest.raises(ConfigurationError):
        build_llm_client(config.llm)


def test_openai_client_sends_system_message(monkeypatch, make_config, mocker):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test-0123456789")
    chat = mocker.patch("langchain_openai.ChatOpenAI")
    chat.return_value.invoke.return_value = mocker.MagicMock(content="1. Strategy games")

    client = build_llm_client(make_config('llm.name="openai"').llm)
    assert client.complete("prompt text", user_id="u1") == "1. Strategy games"

    messages = chat.return_value.invoke.call_args.args[0]
    assert messages[0].content == "prompt text"
    assert chat.call_args.kwargs["temperature"] == 0


def test_rate_limiter_spaces_calls(mocker):
    sleep = mocker.patch("llm_clients.time.sleep")
    limiter = RateLimiter(calls_per_minute=600)  # 0.1 s apart
    limiter.wait()
    limiter.wait()
    assert sleep.call_count == 1
    assert 0 < sleep.call_args.args[0] <= 0.1


def test_rate_limiter_disabled_for_zero_rate():
    limiter = RateLimiter(calls_per_minute=0)
    start = time.monotonic()
    for _ in range(5):
        limiter.wait()
    assert time.monotonic() - start < 0.05
