# preference_llm.py

"""
Zero-shot extraction of a user's m textual preferences from the titles they
interacted with, plus the per-user JSONL preference cache.

The response format is pinned to the numbered list of the Standard Template
("1. <preference>" ... "m. <preference>") and anything else is rejected, so a
user whose responses never follow it is dropped after the retry budget.
"""

import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

from langchain_core.prompts import PromptTemplate
from pydantic import BaseModel, StringConstraints, TypeAdapter, ValidationError, ValidationInfo, field_validator

from corpus import ItemCatalog, SplitDataset
from errors import MalformedResponse
from llm_clients import LlmClient, MockLlmClient, register_mock_responder
from llm_pipeline import LlmCallGraph
from logger import logger
from utils import append_jsonl, read_jsonl, stable_hash, stable_int

MAX_PREFERENCE_CHARS = 200
SEQUENCE_HEADER = "Historical Interaction Sequence:"
TEMPLATE_HEADER = "Standard Template:"

PREFERENCE_PROMPT = PromptTemplate.from_template(
    "Task: Analyze the historical interaction sequence of a user below and summarize "
    "the user's preferences as {m} short preference statements.\n"
    "\n"
    "Role: You are a seasoned expert in analyzing and capturing user preferences.\n"
    "\n"
    "Requirements:\n"
    "1. Use what you know about each item (genre, theme, style, audience), not only its title.\n"
    "2. Give exactly {m} preferences, each a short phrase of at most ten words.\n"
    "3. Keep the preferences diverse; do not restate the same idea twice.\n"
    "4. Answer only with the list in the Standard Template, without any introduction or explanation.\n"
    "\n"
    f"{TEMPLATE_HEADER}\n"
    "{slots}\n"
    "\n"
    f"{SEQUENCE_HEADER}\n"
    "{sequence}\n"
)


# ==============================
# Output schema
# ==============================

PreferenceText = Annotated[str, StringConstraints(strip_whitespace=True, min_length=1, max_length=MAX_PREFERENCE_CHARS)]


class PreferenceList(BaseModel):
    """What a parsed response must satisfy; pass ``context={"m": m}`` to pin the count."""

    preferences: List[PreferenceText]

    @field_validator("preferences")
    @classmethod
    def _one_per_slot(cls, value: List[str], info: ValidationInfo) -> List[str]:
        m = (info.context or {}).get("m")
        if m is not None and len(value) != m:
            raise ValueError(f"expected {m} preferences, found {len(value)}")
        for position, text in enumerate(value, start=1):
            if "<preference" in text:
                raise ValueError(f"preference {position} is still the template placeholder")
        return value


PREFERENCE_TEXTS = TypeAdapter(List[PreferenceText])


def first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    where = ".".join(str(part) for part in error["loc"])
    return f"{where}: {error['msg']}" if where else error["msg"]


# ==============================
# Domain Types
# ==============================

@dataclass(frozen=True)
class PreferenceSet:
    user_id: str
    preferences: Tuple[str, ...]
    source: Literal["llm", "mock", "manual"]
    raw_response: str = ""
    prompt_hash: str = ""

    def __post_init__(self):
        try:
            PREFERENCE_TEXTS.validate_python(list(self.preferences))
        except ValidationError as exc:
            raise ValueError(f"preferences of user {self.user_id}: {first_error(exc)}") from exc

    @property
    def m(self) -> int:
        return len(self.preferences)

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "preferences": list(self.preferences),
            "source": self.source,
            "raw_response": self.raw_response,
            "prompt_hash": self.prompt_hash,
        }


@dataclass(frozen=True)
class DroppedUser:
    """A user whose preferences could not be extracted; excluded from training and evaluation."""

    user_id: str
    reason: str
    raw_response: str = ""
    prompt_hash: str = ""

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "dropped": True,
            "reason": self.reason,
            "raw_response": self.raw_response,
            "prompt_hash": self.prompt_hash,
        }


ExtractionOutcome = Union[PreferenceSet, DroppedUser]


# ==============================
# Prompt rendering and parsing
# ==============================

def render_preference_prompt(titles: Sequence[str], m: int) -> str:
    if not titles:
        raise ValueError("cannot render a preference prompt for an empty sequence")
    slots = "\n".join(f"{i}. <preference {i}>" for i in range(1, m + 1))
    sequence = "\n".join(f"- {title}" for title in titles)
    return PREFERENCE_PROMPT.format(m=m, slots=slots, sequence=sequence)


NUMBERED_LINE = re.compile(r"^\s*(?:[-*]\s+)?\**(\d{1,3})\**\s*[.)]\s*(.*?)\s*$")
BOLD_HEAD = re.compile(r"^\*\*(.+?)\*\*\s*(?:[:\-–—].*)?$")


def _clean_preference(text: str) -> str:
    bold = BOLD_HEAD.match(text)
    if bold:
        text = bold.group(1)
    text = re.sub(r"[*_`]+", "", text).strip()
    return text.strip("\"'“” ").rstrip(":").strip()


def parse_preference_response(raw: str, m: int) -> List[str]:
    """Extract exactly ``m`` preferences from a numbered-list response."""
    if not raw or not raw.strip():
        raise MalformedResponse("preferences", "empty response")

    numbered: List[Tuple[int, str]] = []
    for line in raw.splitlines():
        match = NUMBERED_LINE.match(line)
        if match:
            numbered.append((int(match.group(1)), match.group(2)))

    if [n for n, _ in numbered] != list(range(1, len(numbered) + 1)):
        raise MalformedResponse("preferences", "numbering does not run 1, 2, 3, ...")

    cleaned = [_clean_preference(text) for _, text in numbered]
    try:
        return PreferenceList.model_validate({"preferences": cleaned}, context={"m": m}).preferences
    except ValidationError as exc:
        raise MalformedResponse("preferences", first_error(exc)) from exc


def render_preference_response(preferences: Sequence[str]) -> str:
    """Standard-template response for known preferences (inverse of the parser)."""
    return "\n".join(f"{i}. {p}" for i, p in enumerate(preferences, start=1))


# ==============================
# Mock responder
# ==============================

STOPWORDS = frozenset(
    "the a an of and or in on at to for with from by is it its this that edition vol volume "
    "part series collection complete deluxe new set pack game games movie film".split()
)
PHRASES = (
    "Titles featuring {word}",
    "Interest in {word} themes",
    "Enjoys {word} content",
    "Drawn to {word} experiences",
    "Prefers {word} style items",
)


def prompt_section(prompt: str, header: str) -> List[str]:
    lines = prompt.split(header, 1)[1].splitlines() if header in prompt else []
    section = []
    for line in lines[1:]:
        if not line.strip():
            break
        section.append(line)
    return section


def mock_preferences(titles: Sequence[str], m: int, seed: int) -> List[str]:
    """Most frequent content words of the titles, phrased as preferences."""
    counts = Counter(
        word
        for title in titles
        for word in re.findall(r"[a-z][a-z']+", title.lower())
        if len(word) > 2 and word not in STOPWORDS
    )
    ranked = sorted(counts, key=lambda w: (-counts[w], stable_int(seed, w), w))
    preferences = [PHRASES[rank % len(PHRASES)].format(word=word) for rank, word in enumerate(ranked[:m])]
    while len(preferences) < m:
        preferences.append(f"Broad interest in popular titles ({len(preferences) + 1})")
    return preferences


@register_mock_responder(SEQUENCE_HEADER)
def mock_preference_response(prompt: str, seed: int) -> str:
    titles = [line[2:].strip() for line in prompt_section(prompt, SEQUENCE_HEADER) if line.startswith("- ")]
    m = len(prompt_section(prompt, TEMPLATE_HEADER))
    return render_preference_response(mock_preferences(titles, m, seed))


# ==============================
# Cache
# ==============================

class PreferenceCache:
    """JSONL store of extraction outcomes, one record per user; appends are serialized."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._outcomes: Dict[str, ExtractionOutcome] = {}
        if self.path.exists():
            for record in read_jsonl(self.path):
                self._outcomes[record["user_id"]] = _outcome_from_record(record)
            logger.debug(f"Preference cache {self.path} loaded with {len(self._outcomes)} users")

    def __len__(self) -> int:
        return len(self._outcomes)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._outcomes

    def get(self, user_id: str) -> Optional[ExtractionOutcome]:
        return self._outcomes.get(user_id)

    def put(self, outcome: ExtractionOutcome) -> None:
        with self._lock:
            self._outcomes[outcome.user_id] = outcome
            append_jsonl(self.path, outcome.to_record())

    def preference_sets(self) -> Dict[str, PreferenceSet]:
        return {u: o for u, o in self._outcomes.items() if isinstance(o, PreferenceSet)}

    def dropped(self) -> Dict[str, DroppedUser]:
        return {u: o for u, o in self._outcomes.items() if isinstance(o, DroppedUser)}


def _outcome_from_record(record: dict) -> ExtractionOutcome:
    if record.get("dropped"):
        return DroppedUser(record["user_id"], record.get("reason", ""), record.get("raw_response", ""),
                           record.get("prompt_hash", ""))
    return PreferenceSet(
        user_id=record["user_id"],
        preferences=tuple(record["preferences"]),
        source=record.get("source", "manual"),
        raw_response=record.get("raw_response", ""),
        prompt_hash=record.get("prompt_hash", ""),
    )


# ==============================
# Extraction
# ==============================

def extract_preferences(user_id: str, titles: Sequence[str], client: LlmClient, m: int,
                        cache: Optional[PreferenceCache] = None,
                        graph: Optional[LlmCallGraph] = None) -> ExtractionOutcome:
    """
    Cached outcome if present; otherwise prompt -> client -> parse with up to
    ``client.max_retries`` calls. A final parse failure yields a DroppedUser.
    """
    if not titles:
        raise ValueError(f"user {user_id} has no titles to prompt with")
    if cache is not None:
        cached = cache.get(user_id)
        if cached is not None and (isinstance(cached, DroppedUser) or cached.m == m):
            return cached

    prompt = render_preference_prompt(titles, m)
    graph = graph or LlmCallGraph(client, lambda raw: parse_preference_response(raw, m))
    result = graph.run(user_id, prompt)

    if result.ok:
        outcome: ExtractionOutcome = PreferenceSet(
            user_id=user_id,
            preferences=tuple(result.parsed),
            source="mock" if isinstance(client, MockLlmClient) else "llm",
            raw_response=result.raw,
            prompt_hash=result.prompt_hash,
        )
    else:
        logger.warning(f"⚠️ [{user_id}] dropped after {result.attempts} attempt(s): {result.error}")
        outcome = DroppedUser(user_id, result.error or "malformed response", result.raw, result.prompt_hash)

    if cache is not None:
        cache.put(outcome)
    return outcome


def extract_all_preferences(split: SplitDataset, catalog: ItemCatalog, client: LlmClient, m: int,
                            cache: Optional[PreferenceCache] = None,
                            max_titles: Optional[int] = None) -> Tuple[Dict[str, PreferenceSet], Dict[str, DroppedUser]]:
    """Extract for every user from the training prefix only; every user ends up in exactly one of the two maps."""
    graph = LlmCallGraph(client, lambda raw: parse_preference_response(raw, m))
    sets: Dict[str, PreferenceSet] = {}
    dropped: Dict[str, DroppedUser] = {}
    for user_id, user_split in split.users.items():
        history = list(user_split.train)
        if max_titles is not None:
            history = history[-max_titles:]
        if not history:
            dropped[user_id] = DroppedUser(user_id, "empty training prefix")
            continue
        outcome = extract_preferences(user_id, catalog.titles_of(history), client, m, cache=cache, graph=graph)
        if isinstance(outcome, PreferenceSet):
            sets[user_id] = outcome
        else:
            dropped[user_id] = outcome

    logger.info(f"✅ Preferences for {len(sets)} user(s), {len(dropped)} dropped")
    return sets, dropped
