# llm_clients.py

"""
LLM client handles. The live client goes through LangChain's ChatOpenAI; the mock
client is a pure function of (prompt, seed) and is what every test uses.
"""

import os
import threading
import time
from typing import Callable, Dict, Optional

from langchain_core.messages import SystemMessage

from errors import ConfigurationError, LlmCallError
from logger import logger
from utils import mask_api_key, timeout


class RateLimiter:
    """Minimum spacing between calls, shared by every thread using one client."""

    def __init__(self, calls_per_minute: float):
        self.interval = 60.0 / calls_per_minute if calls_per_minute > 0 else 0.0
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def wait(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.interval
        if delay > 0:
            time.sleep(delay)


class LlmClient:
    """Handle to an LLM: ``name``, ``max_retries`` (total calls per prompt) and ``timeout`` seconds."""

    def __init__(self, name: str, max_retries: int = 2, timeout: float = 60.0,
                 rate_limiter: Optional[RateLimiter] = None):
        self.name = name
        self.max_retries = max(1, max_retries)
        self.timeout = timeout
        self.rate_limiter = rate_limiter
        self.calls = 0

    def _complete(self, prompt: str) -> str:
        raise NotImplementedError

    def complete(self, prompt: str, user_id: str = "?") -> str:
        if self.rate_limiter is not None:
            self.rate_limiter.wait()
        self.calls += 1
        try:
            return timeout(self.timeout)(self._complete)(prompt)
        except Exception as exc:
            raise LlmCallError(user_id, exc) from exc


# ==============================
# Mock client
# ==============================

MockResponder = Callable[[str, int], str]
MOCK_RESPONDERS: Dict[str, MockResponder] = {}


def register_mock_responder(marker: str):
    """Register a deterministic responder for prompts containing ``marker``."""
    def decorator(func: MockResponder) -> MockResponder:
        MOCK_RESPONDERS[marker] = func
        return func
    return decorator


class MockLlmClient(LlmClient):
    def __init__(self, seed: int = 0, max_retries: int = 2):
        super().__init__(name=f"mock-s{seed}", max_retries=max_retries, timeout=0)
        self.seed = seed

    def _complete(self, prompt: str) -> str:
        for marker, responder in MOCK_RESPONDERS.items():
            if marker in prompt:
                return responder(prompt, self.seed)
        raise ValueError("mock client has no responder for this prompt")


# ==============================
# OpenAI client
# ==============================

class ChatOpenAIClient(LlmClient):
    def __init__(self, model: str, api_key: str, max_retries: int = 2, timeout: float = 60.0,
                 rate_limiter: Optional[RateLimiter] = None):
        super().__init__(name=model, max_retries=max_retries, timeout=timeout, rate_limiter=rate_limiter)
        from langchain_openai import ChatOpenAI

        # retries are handled by the call graph, not by the SDK
        self.model = ChatOpenAI(model=model, temperature=0, api_key=api_key, max_retries=0, timeout=timeout)

    def _complete(self, prompt: str) -> str:
        return self.model.invoke([SystemMessage(content=prompt)]).content


def build_llm_client(llm_config) -> LlmClient:
    if llm_config.name == "mock":
        return MockLlmClient(seed=llm_config.seed, max_retries=llm_config.max_retries)

    api_key = os.getenv(llm_config.api_key_env, "")
    if not api_key:
        raise ConfigurationError(f"{llm_config.api_key_env} is not set (llm.name = 'openai')")
    logger.info(f"🔐 Using {llm_config.model} with key {mask_api_key(api_key)}")
    return ChatOpenAIClient(
        model=llm_config.model,
        api_key=api_key,
        max_retries=llm_config.max_retries,
        timeout=llm_config.timeout,
        rate_limiter=RateLimiter(llm_config.rate_limit),
    )
