# explainer.py

"""
Four-step chain-of-thought explanations.

The prompt carries the user's sequence, their preferences paired with the
attention weights omega (4 decimals) and the target item. The response is
parsed section by section ("Step 1:" .. "Step 4:") into an ExplanationRecord.
A response that never parses yields an unavailable record; nothing is filled in.
"""

import re
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from langchain_core.prompts import PromptTemplate
from pydantic import BaseModel, Field, StringConstraints, ValidationError, ValidationInfo, field_validator, model_validator

from corpus import ItemCatalog, SplitDataset, build_fixed_sequence
from errors import EvaluationProtocolError, MalformedResponse, TextValidationError
from evaluator import build_eval_candidates, rank_in_candidates
from llm_clients import LlmClient, register_mock_responder
from llm_pipeline import LlmCallGraph
from logger import logger
from preference_llm import STOPWORDS, PreferenceSet, first_error, prompt_section
from utils import append_jsonl, read_jsonl, stable_int

ProbabilityLabel = Literal["Low", "Medium", "High"]
PROBABILITY_LABELS = ("Low", "Medium", "High")

SEQUENCE_SECTION = "User Interaction Sequence:"
PREFERENCE_SECTION = "User Preferences (weight):"
TARGET_LINE = "Target Item:"

COT_PROMPT = PromptTemplate.from_template(
    "Task: Explain to the user why the target item below is recommended to them. "
    "Work through the four steps in order and answer in the Response Format.\n"
    "\n"
    "Role: You are a recommendation analyst who reasons step by step from a user's "
    "interaction history and preferences.\n"
    "\n"
    f"{SEQUENCE_SECTION}\n"
    "{sequence}\n"
    "\n"
    f"{PREFERENCE_SECTION}\n"
    "{preferences}\n"
    "\n"
    f"{TARGET_LINE} {{target}}\n"
    "\n"
    "Steps:\n"
    "Step 1: For each preference, point out the items in the interaction sequence it comes from "
    "and analyze what the user enjoys about them.\n"
    "Step 2: Introduce the target item briefly. Then rate how well it fits each preference with a "
    "fitness score between 0 and 1, and give a reason for each score.\n"
    "Step 3: Combine the fitness scores with the preference weights and judge the probability that "
    "the user interacts with the target item as Low, Medium or High. Give a reason.\n"
    "Step 4: Write a short personalized recommendation of the target item addressed to the user.\n"
    "\n"
    "Response Format:\n"
    "Step 1:\n"
    "Preference 1: <preference 1> (weight: <weight 1>)\n"
    "Analysis: <analysis>\n"
    "(repeat for every preference)\n"
    "Step 2:\n"
    "Target item introduction: <introduction>\n"
    "Preference Fitness:\n"
    "1. <preference 1>: <fitness between 0 and 1>\n"
    "Reason: <reason>\n"
    "(repeat for every preference)\n"
    "Step 3:\n"
    "Interaction probability: <Low, Medium or High>\n"
    "Reason: <reason>\n"
    "Step 4:\n"
    "Recommendation: <recommendation text>\n"
)


# ==============================
# Domain Types
# ==============================

@dataclass(frozen=True)
class PreferenceAnalysis:
    preference: str
    analysis: str


@dataclass(frozen=True)
class PreferenceFitness:
    preference: str
    fitness: float
    reason: str
    clamped: bool = False


@dataclass(frozen=True)
class ExplanationRecord:
    step1: Tuple[PreferenceAnalysis, ...] = ()
    introduction: str = ""
    step2: Tuple[PreferenceFitness, ...] = ()
    probability: Optional[ProbabilityLabel] = None
    probability_reason: str = ""
    recommendation: str = ""
    echoed_weights: Tuple[float, ...] = ()
    user_id: str = ""
    target: str = ""
    omega: Tuple[float, ...] = ()
    rank: Optional[str] = None
    available: bool = True
    error: Optional[str] = None
    raw: str = ""
    prompt_hash: str = ""

    @classmethod
    def unavailable(cls, user_id: str, target: str, omega: Sequence[float], reason: str,
                    raw: str = "", prompt_hash: str = "", rank: Optional[str] = None) -> "ExplanationRecord":
        return cls(user_id=user_id, target=target, omega=tuple(float(w) for w in omega), rank=rank,
                   available=False, error=reason, raw=raw, prompt_hash=prompt_hash)

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "target": self.target,
            "omega": list(self.omega),
            "rank": self.rank,
            "available": self.available,
            "error": self.error,
            "echoed_weights": list(self.echoed_weights),
            "steps": {
                "step1": [{"preference": a.preference, "analysis": a.analysis} for a in self.step1],
                "step2": {
                    "introduction": self.introduction,
                    "fitness": [
                        {"preference": f.preference, "fitness": f.fitness, "reason": f.reason, "clamped": f.clamped}
                        for f in self.step2
                    ],
                },
                "step3": {"probability": self.probability, "reason": self.probability_reason},
                "step4": {"recommendation": self.recommendation},
            },
            "raw": self.raw,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ExplanationRecord":
        steps = record.get("steps", {})
        step2 = steps.get("step2", {})
        return cls(
            step1=tuple(PreferenceAnalysis(a["preference"], a["analysis"]) for a in steps.get("step1", [])),
            introduction=step2.get("introduction", ""),
            step2=tuple(
                PreferenceFitness(f["preference"], float(f["fitness"]), f["reason"], bool(f.get("clamped", False)))
                for f in step2.get("fitness", [])
            ),
            probability=steps.get("step3", {}).get("probability"),
            probability_reason=steps.get("step3", {}).get("reason", ""),
            recommendation=steps.get("step4", {}).get("recommendation", ""),
            echoed_weights=tuple(record.get("echoed_weights", [])),
            user_id=record.get("user_id", ""),
            target=record.get("target", ""),
            omega=tuple(record.get("omega", [])),
            rank=record.get("rank"),
            available=record.get("available", True),
            error=record.get("error"),
            raw=record.get("raw", ""),
            prompt_hash=record.get("prompt_hash", ""),
        )


# ==============================
# Prompt
# ==============================

def render_cot_prompt(titles: Sequence[str], preferences: PreferenceSet, omega: Sequence[float],
                      target_title: str) -> str:
    omega = [float(w) for w in omega]
    if len(omega) != preferences.m:
        raise TextValidationError(f"{preferences.m} preferences but {len(omega)} attention weights")
    if not titles:
        raise TextValidationError("cannot explain a recommendation for an empty sequence")
    if not target_title.strip():
        raise TextValidationError("target title is blank")
    return COT_PROMPT.format(
        sequence="\n".join(f"- {title}" for title in titles),
        preferences="\n".join(
            f"{i}. {text} (weight: {weight:.4f})"
            for i, (text, weight) in enumerate(zip(preferences.preferences, omega), start=1)
        ),
        target=target_title,
    )


# ==============================
# Output schema
# ==============================

Text = Annotated[str, StringConstraints(strip_whitespace=True, min_length=1)]

# first failing field -> the step it came from
STEP_OF_FIELD = {
    "step1": "Step 1",
    "echoed_weights": "Step 1",
    "introduction": "Step 2",
    "step2": "Step 2",
    "probability": "Step 3",
    "probability_reason": "Step 3",
    "recommendation": "Step 4",
}


class AnalysisEntry(BaseModel):
    preference: Text
    analysis: Text


class FitnessEntry(BaseModel):
    preference: Text
    fitness: float = Field(allow_inf_nan=False)
    reason: str = ""
    clamped: bool = False

    @model_validator(mode="after")
    def _clamp_to_unit_interval(self) -> "FitnessEntry":
        value = min(1.0, max(0.0, self.fitness))
        if value != self.fitness:
            logger.warning(f"⚠️ fitness {self.fitness} for {self.preference!r} clamped to [0, 1]")
            self.fitness, self.clamped = value, True
        return self


class ExplanationSchema(BaseModel):
    """A parsed four-step response; validate with ``context={"m": m}``."""

    step1: List[AnalysisEntry]
    echoed_weights: List[float] = []
    introduction: Text
    step2: List[FitnessEntry]
    probability: ProbabilityLabel
    probability_reason: str = ""
    recommendation: Text

    @field_validator("step1", "step2")
    @classmethod
    def _one_entry_per_preference(cls, value: list, info: ValidationInfo) -> list:
        m = (info.context or {}).get("m")
        if m is not None and len(value) != m:
            raise ValueError(f"expected {m} entries, found {len(value)}")
        return value

    @field_validator("echoed_weights")
    @classmethod
    def _all_weights_or_none(cls, value: List[float], info: ValidationInfo) -> List[float]:
        m = (info.context or {}).get("m")
        if value and m is not None and len(value) != m:
            raise ValueError(f"{len(value)} echoed weights for {m} preferences")
        return value

    def to_record(self) -> ExplanationRecord:
        return ExplanationRecord(
            step1=tuple(PreferenceAnalysis(a.preference, a.analysis) for a in self.step1),
            introduction=self.introduction,
            step2=tuple(PreferenceFitness(f.preference, f.fitness, f.reason, f.clamped) for f in self.step2),
            probability=self.probability,
            probability_reason=self.probability_reason,
            recommendation=self.recommendation,
            echoed_weights=tuple(self.echoed_weights),
        )


# ==============================
# Parsing
# ==============================

STEP_HEADER = re.compile(r"^\s*Step\s*([1-4])\s*[:.]?", re.IGNORECASE | re.MULTILINE)
LABEL = re.compile(
    r"^\s*(Preference\s+\d+|Analysis|Target item introduction|Preference Fitness|"
    r"Interaction probability|Reason|Recommendation)\s*:\s*(.*)$",
    re.IGNORECASE,
)
NUMBER = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
FITNESS_LINE = re.compile(rf"^\s*(\d+)\s*[.)]\s*(.+?)\s*:\s*({NUMBER})\s*$")
WEIGHT_SUFFIX = re.compile(rf"\s*\(\s*weight\s*[:=]?\s*({NUMBER})\s*\)\s*$", re.IGNORECASE)


def _normalize(raw: str) -> str:
    text = re.sub(r"\\textbf\{([^}]*)\}", r"\1", raw)
    text = text.replace("**", "").replace("__", "")
    return re.sub(r"^\s*#+\s*", "", text, flags=re.MULTILINE)


def _split_steps(text: str) -> Dict[int, str]:
    headers = list(STEP_HEADER.finditer(text))
    steps: Dict[int, str] = {}
    for position, match in enumerate(headers):
        end = headers[position + 1].start() if position + 1 < len(headers) else len(text)
        steps.setdefault(int(match.group(1)), text[match.end():end])
    return steps


def _blocks(section: str) -> List[Tuple[str, str, List[str]]]:
    """(label, inline value, continuation lines) in order; numbered fitness lines get label 'fitness'."""
    blocks: List[Tuple[str, str, List[str]]] = []
    for line in section.splitlines():
        if not line.strip():
            continue
        label = LABEL.match(line)
        fitness = None if label else FITNESS_LINE.match(line)
        if label:
            key = label.group(1).lower()
            key = "preference" if key.startswith("preference") and key != "preference fitness" else key
            blocks.append((key, label.group(2).strip(), []))
        elif fitness:
            blocks.append(("fitness", line.strip(), []))
        elif blocks:
            blocks[-1][2].append(line.strip())
        else:
            blocks.append(("text", line.strip(), []))
    return blocks


def _block_text(block: Tuple[str, str, List[str]]) -> str:
    return " ".join(part for part in [block[1], *block[2]] if part).strip()


def _read_step1(section: str) -> dict:
    analyses: List[dict] = []
    weights: List[float] = []
    pending: Optional[str] = None
    for block in _blocks(section):
        if block[0] == "preference":
            name = _block_text(block)
            weight = WEIGHT_SUFFIX.search(name)
            if weight:
                weights.append(float(weight.group(1)))
                name = name[:weight.start()].strip()
            pending = name
        elif block[0] == "analysis" and pending is not None:
            analyses.append({"preference": pending, "analysis": _block_text(block)})
            pending = None
    return {"step1": analyses, "echoed_weights": weights}


def _read_step2(section: str) -> dict:
    introduction = ""
    entries: List[dict] = []
    for block in _blocks(section):
        kind = block[0]
        if kind == "target item introduction":
            introduction = _block_text(block)
        elif kind == "fitness":
            match = FITNESS_LINE.match(block[1])
            entries.append({"preference": match.group(2).strip(), "fitness": float(match.group(3)), "reason": ""})
        elif kind == "reason" and entries and not entries[-1]["reason"]:
            entries[-1]["reason"] = _block_text(block)
    return {"introduction": introduction, "step2": entries}


def _read_step3(section: str) -> dict:
    label: Optional[str] = None
    reason = ""
    for block in _blocks(section):
        if block[0] == "interaction probability":
            word = re.match(r"[A-Za-z]+", block[1])
            label = word.group(0).capitalize() if word else None
        elif block[0] == "reason" and not reason:
            reason = _block_text(block)
    return {"probability": label, "probability_reason": reason}


def _read_step4(section: str) -> dict:
    blocks = _blocks(section)
    labelled = [b for b in blocks if b[0] == "recommendation"]
    text = _block_text(labelled[0]) if labelled else " ".join(_block_text(b) for b in blocks)
    return {"recommendation": text}


def parse_explanation(raw: str, m: int) -> ExplanationRecord:
    """Split the response into its four steps, then validate them against ExplanationSchema."""
    if not raw or not raw.strip():
        raise MalformedResponse("Step 1", "empty response")
    steps = _split_steps(_normalize(raw))
    for number in range(1, 5):
        if number not in steps:
            raise MalformedResponse(f"Step {number}")

    fields = {**_read_step1(steps[1]), **_read_step2(steps[2]), **_read_step3(steps[3]), **_read_step4(steps[4])}
    try:
        schema = ExplanationSchema.model_validate(fields, context={"m": m})
    except ValidationError as exc:
        loc = exc.errors()[0]["loc"]
        part = STEP_OF_FIELD.get(str(loc[0]) if loc else "", "Step 1")
        raise MalformedResponse(part, first_error(exc)) from exc
    return replace(schema.to_record(), raw=raw)


def parse_against_weights(raw: str, omega: Sequence[float]) -> ExplanationRecord:
    """parse_explanation, rejecting an echo of the weights that misreports omega."""
    record = parse_explanation(raw, len(omega))
    if record.echoed_weights and not np.allclose(record.echoed_weights, omega, rtol=0.0, atol=1e-4):
        raise MalformedResponse(
            "Step 1", f"echoed weights {list(record.echoed_weights)} differ from {[round(w, 4) for w in omega]}"
        )
    return record


def render_explanation_response(record: ExplanationRecord) -> str:
    """Response text in the Response Format; parse_explanation inverts it on the structured fields."""
    lines = ["Step 1:"]
    for i, analysis in enumerate(record.step1):
        suffix = f" (weight: {record.echoed_weights[i]:.4f})" if len(record.echoed_weights) == len(record.step1) else ""
        lines += [f"Preference {i + 1}: {analysis.preference}{suffix}", f"Analysis: {analysis.analysis}"]
    lines += ["", "Step 2:", f"Target item introduction: {record.introduction}", "Preference Fitness:"]
    for i, fitness in enumerate(record.step2, start=1):
        lines += [f"{i}. {fitness.preference}: {fitness.fitness}", f"Reason: {fitness.reason}"]
    lines += ["", "Step 3:", f"Interaction probability: {record.probability}",
              f"Reason: {record.probability_reason}", "", "Step 4:", f"Recommendation: {record.recommendation}"]
    return "\n".join(lines)


# ==============================
# Mock responder
# ==============================

PREFERENCE_WITH_WEIGHT = re.compile(rf"^\s*\d+\.\s*(.+?)\s*\(weight:\s*({NUMBER})\)\s*$")


def _content_words(text: str) -> set:
    return {w for w in re.findall(r"[a-z][a-z']+", text.lower()) if len(w) > 3 and w not in STOPWORDS}


def _probability_label(score: float) -> ProbabilityLabel:
    if score >= 0.6:
        return "High"
    if score >= 0.3:
        return "Medium"
    return "Low"


@register_mock_responder(PREFERENCE_SECTION)
def mock_explanation_response(prompt: str, seed: int) -> str:
    titles = [line[2:].strip() for line in prompt_section(prompt, SEQUENCE_SECTION) if line.startswith("- ")]
    pairs = [PREFERENCE_WITH_WEIGHT.match(line) for line in prompt_section(prompt, PREFERENCE_SECTION)]
    preferences = [(p.group(1), float(p.group(2))) for p in pairs if p]
    target = prompt.split(TARGET_LINE, 1)[1].splitlines()[0].strip()
    target_words = _content_words(target)

    step1, step2 = [], []
    for text, weight in preferences:
        words = _content_words(text)
        sources = [t for t in titles if words & _content_words(t)][:4] or titles[-2:]
        step1.append(PreferenceAnalysis(
            text, f"The user interacted with {', '.join(repr(t) for t in sources)}, which reflects {text.lower()}."
        ))
        if words & target_words:
            fitness = 0.9
        else:
            fitness = round(0.1 + (stable_int("mock-fitness", seed, text, target) % 7) / 10, 1)
        step2.append(PreferenceFitness(
            text, fitness, f"{target!r} {'matches' if fitness >= 0.5 else 'only partly matches'} {text.lower()}."
        ))

    score = sum(w * f.fitness for (_, w), f in zip(preferences, step2))
    label = _probability_label(score)
    top = max(zip(preferences, step2), key=lambda pair: pair[0][1] * pair[1].fitness, default=None)
    top_text = top[0][0].lower() if top else "the user's interests"
    record = ExplanationRecord(
        step1=tuple(step1),
        introduction=f"{target!r} is the item under consideration for this user.",
        step2=tuple(step2),
        probability=label,
        probability_reason=f"The weighted fitness over all preferences is {score:.2f}.",
        recommendation=f"Since you enjoy {top_text}, {target!r} is worth a try.",
        echoed_weights=tuple(w for _, w in preferences),
    )
    return render_explanation_response(record)


# ==============================
# Store
# ==============================

class ExplanationStore:
    """JSONL file of explanation records; the latest record per user wins on read."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def put(self, record: ExplanationRecord) -> None:
        with self._lock:
            append_jsonl(self.path, record.to_record())

    def records(self) -> List[ExplanationRecord]:
        if not self.path.exists():
            return []
        latest: Dict[str, ExplanationRecord] = {}
        for raw in read_jsonl(self.path):
            latest[raw["user_id"]] = ExplanationRecord.from_record(raw)
        return list(latest.values())


# ==============================
# Generation
# ==============================

def generate_explanation(user_id: str, titles: Sequence[str], preferences: PreferenceSet,
                         omega: Sequence[float], target_title: str, client: LlmClient,
                         rank: Optional[str] = None, graph: Optional[LlmCallGraph] = None) -> ExplanationRecord:
    """
    render -> client -> parse with the client's retry budget; a final failure is marked unavailable.

    Weights echoed in Step 1 are kept as the response gave them. A response
    whose echo differs from omega by more than 1e-4 counts as malformed.
    """
    omega = tuple(float(w) for w in omega)
    prompt = render_cot_prompt(titles, preferences, omega, target_title)
    graph = graph or LlmCallGraph(client, lambda raw: parse_against_weights(raw, omega))
    result = graph.run(user_id, prompt)
    if not result.ok:
        logger.warning(f"⚠️ [{user_id}] explanation unavailable after {result.attempts} attempt(s): {result.error}")
        return ExplanationRecord.unavailable(user_id, target_title, omega, result.error or "malformed response",
                                             raw=result.raw, prompt_hash=result.prompt_hash, rank=rank)

    parsed: ExplanationRecord = result.parsed
    if not parsed.echoed_weights:
        logger.debug(f"[{user_id}] response did not echo the preference weights")
    return replace(parsed, user_id=user_id, target=target_title, omega=omega,
                   rank=rank, raw=result.raw, prompt_hash=result.prompt_hash)


def explain_users(model, split: SplitDataset, catalog: ItemCatalog, preference_sets: Mapping[str, PreferenceSet],
                  preference_embeddings: Mapping[str, np.ndarray], client: LlmClient, seed: int,
                  max_users: int = 20, num_negatives: int = 100,
                  store: Optional[ExplanationStore] = None) -> List[ExplanationRecord]:
    """Explain each user's most recent item (test target) from everything before it."""
    n = model.hparams["n"]
    users = [u for u in split.eligible_users("test") if u in preference_sets and u in preference_embeddings]
    users = users[:max_users]
    records: List[ExplanationRecord] = []

    was_training = model.training
    model.eval()
    try:
        for user_id in users:
            user_split = split.users[user_id]
            history = user_split.history("test")
            indices = torch.as_tensor(build_fixed_sequence(history, n).indices).unsqueeze(0)
            P = torch.as_tensor(np.asarray(preference_embeddings[user_id]), dtype=model.M.dtype).unsqueeze(0)
            with torch.no_grad():
                omega = model.preference_weights(indices, P)[0].tolist()

            rank = None
            try:
                candidates = build_eval_candidates(user_id, user_split, "test", split.item_count, seed, num_negatives)
                rank = f"{rank_in_candidates(model, history, candidates, preference_embeddings[user_id])}/{len(candidates.items)}"
            except EvaluationProtocolError as exc:
                logger.warning(f"⚠️ [{user_id}] no rank in candidates: {exc}")

            record = generate_explanation(
                user_id,
                catalog.titles_of(history[-n:]),
                preference_sets[user_id],
                omega,
                catalog.title_of(user_split.test),
                client,
                rank=rank,
            )
            if store is not None:
                store.put(record)
            records.append(record)
    finally:
        model.train(was_training)

    available = sum(1 for r in records if r.available)
    logger.info(f"✅ {available}/{len(records)} explanation(s) available")
    return records
