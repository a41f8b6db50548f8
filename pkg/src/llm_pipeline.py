# llm_pipeline.py

"""
LangGraph orchestration of a single prompt: call the LLM, parse the response,
and either finish or call again until the client's attempt budget is spent.

    call_llm -> parse_response -> (retry -> call_llm | done -> END)

Client errors (network, timeout) propagate; a malformed response is only
recorded in the state so the caller can decide what a final failure means.
"""

from dataclasses import dataclass
from typing import Any, Callable, Optional, TypedDict

from langgraph.graph import END, StateGraph

from errors import MalformedResponse
from llm_clients import LlmClient
from logger import logger
from utils import stable_hash


class LlmCallState(TypedDict):
    user_id: str
    prompt: str
    raw: Optional[str]
    parsed: Optional[Any]
    error: Optional[str]
    attempts: int
    max_attempts: int


@dataclass(frozen=True)
class LlmCallResult:
    parsed: Optional[Any]
    raw: str
    attempts: int
    error: Optional[str]
    prompt_hash: str

    @property
    def ok(self) -> bool:
        return self.parsed is not None


class LlmCallGraph:
    """Compiled call/parse/retry graph bound to one client and one response parser."""

    def __init__(self, client: LlmClient, parser: Callable[[str], Any]):
        self.client = client
        self.parser = parser
        self.graph = self._build_graph()

    def _build_graph(self):
        builder = StateGraph(LlmCallState)
        builder.add_node("call_llm", self.call_llm)
        builder.add_node("parse_response", self.parse_response)

        builder.set_entry_point("call_llm")
        builder.add_edge("call_llm", "parse_response")
        builder.add_conditional_edges(
            "parse_response",
            self.route,
            {"retry": "call_llm", "done": END},
        )
        return builder.compile()

    def call_llm(self, state: LlmCallState) -> LlmCallState:
        raw = self.client.complete(state["prompt"], user_id=state["user_id"])
        return {**state, "raw": raw, "attempts": state["attempts"] + 1}

    def parse_response(self, state: LlmCallState) -> LlmCallState:
        try:
            parsed = self.parser(state["raw"] or "")
        except MalformedResponse as exc:
            logger.warning(
                f"🔁 [{state['user_id']}] malformed response on attempt {state['attempts']}: {exc}"
            )
            return {**state, "parsed": None, "error": str(exc)}
        return {**state, "parsed": parsed, "error": None}

    @staticmethod
    def route(state: LlmCallState) -> str:
        if state["parsed"] is not None or state["attempts"] >= state["max_attempts"]:
            return "done"
        return "retry"

    def run(self, user_id: str, prompt: str, max_attempts: Optional[int] = None) -> LlmCallResult:
        attempts = max_attempts if max_attempts is not None else self.client.max_retries
        state: LlmCallState = {
            "user_id": user_id,
            "prompt": prompt,
            "raw": None,
            "parsed": None,
            "error": None,
            "attempts": 0,
            "max_attempts": max(1, attempts),
        }
        final = self.graph.invoke(state, {"recursion_limit": 4 * state["max_attempts"] + 4})
        return LlmCallResult(
            parsed=final["parsed"],
            raw=final["raw"] or "",
            attempts=final["attempts"],
            error=final["error"],
            prompt_hash=stable_hash(prompt),
        )
