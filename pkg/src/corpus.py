# corpus.py

"""
Interaction log ingestion, k-core filtering, leave-one-out split and fixed-length
sequence padding.

Input rows are ``user_id, item_id, title, timestamp`` (TSV or JSON lines). Item
index 0 is reserved for padding; real items are numbered from 1 in first-seen order.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import CatalogIntegrityError, CorpusParseError
from logger import logger
from utils import read_jsonl, write_jsonl

PAD_INDEX = 0
EVENT_COLUMNS = ["user_id", "item_id", "timestamp", "order"]


# ==============================
# Domain Types
# ==============================

@dataclass(frozen=True)
class CatalogItem:
    index: int
    item_id: str
    title: str


@dataclass
class ItemCatalog:
    items: List[CatalogItem] = field(default_factory=list)

    def __post_init__(self):
        self._by_id: Dict[str, CatalogItem] = {}
        for expected, item in enumerate(self.items, start=1):
            if item.index != expected:
                raise CatalogIntegrityError(f"catalog index {item.index} out of order (expected {expected})")
            if not item.title.strip():
                raise CatalogIntegrityError(f"item {item.item_id} has an empty title")
            if item.item_id in self._by_id:
                raise CatalogIntegrityError(f"duplicate item_id {item.item_id}")
            self._by_id[item.item_id] = item

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._by_id

    def index_of(self, item_id: str) -> int:
        return self._by_id[item_id].index

    def title_of(self, index: int) -> str:
        if not 1 <= index <= len(self.items):
            raise IndexError(f"item index {index} outside 1..{len(self.items)} (0 is padding)")
        return self.items[index - 1].title

    def titles_of(self, indices: Iterable[int]) -> List[str]:
        return [self.title_of(i) for i in indices]

    @property
    def titles(self) -> List[str]:
        return [item.title for item in self.items]

    def restricted_to(self, item_ids: Iterable[str]) -> "ItemCatalog":
        """Re-index the surviving items contiguously, keeping their relative order."""
        keep = set(item_ids)
        survivors = [c for c in self.items if c.item_id in keep]
        return ItemCatalog([CatalogItem(i, c.item_id, c.title) for i, c in enumerate(survivors, start=1)])


@dataclass(frozen=True)
class InteractionLog:
    """Timestamped events; ``order`` records input position for stable tie-breaking."""

    events: pd.DataFrame

    @classmethod
    def from_rows(cls, rows: Iterable[Tuple[str, str, int]]) -> "InteractionLog":
        frame = pd.DataFrame(
            [(u, i, int(ts), pos) for pos, (u, i, ts) in enumerate(rows)],
            columns=EVENT_COLUMNS,
        )
        return cls(frame.astype({"user_id": str, "item_id": str, "timestamp": "int64", "order": "int64"}))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def users(self) -> List[str]:
        return list(dict.fromkeys(self.events["user_id"]))

    @property
    def items(self) -> List[str]:
        return list(dict.fromkeys(self.events["item_id"]))

    def sorted_events(self) -> pd.DataFrame:
        return self.events.sort_values(["user_id", "timestamp", "order"], kind="stable")


@dataclass(frozen=True)
class UserSplit:
    train: Tuple[int, ...]
    valid: Optional[int] = None
    test: Optional[int] = None

    @property
    def has_targets(self) -> bool:
        return self.valid is not None and self.test is not None

    def history(self, split: Literal["valid", "test"]) -> List[int]:
        """Observed prefix preceding the target of ``split``."""
        if split == "valid":
            return list(self.train)
        return list(self.train) + [self.valid]

    def target(self, split: Literal["valid", "test"]) -> Optional[int]:
        return self.valid if split == "valid" else self.test

    @property
    def all_items(self) -> List[int]:
        tail = [i for i in (self.valid, self.test) if i is not None]
        return list(self.train) + tail


@dataclass
class SplitDataset:
    users: Dict[str, UserSplit]
    item_count: int

    def __len__(self) -> int:
        return len(self.users)

    def eligible_users(self, split: Literal["valid", "test"]) -> List[str]:
        return [u for u, s in self.users.items() if s.target(split) is not None]

    def restricted_to(self, user_ids: Iterable[str]) -> "SplitDataset":
        keep = set(user_ids)
        return SplitDataset({u: s for u, s in self.users.items() if u in keep}, self.item_count)


@dataclass(frozen=True)
class PaddedSequence:
    indices: np.ndarray
    valid_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class CorpusStatistics:
    users: int
    items: int
    actions: int
    avg_actions_per_user: float
    avg_actions_per_item: float
    sparsity: float

    def to_dict(self) -> dict:
        return {
            "users": self.users,
            "items": self.items,
            "actions": self.actions,
            "avg_actions_per_user": round(self.avg_actions_per_user, 4),
            "avg_actions_per_item": round(self.avg_actions_per_item, 4),
            "sparsity": round(self.sparsity, 6),
        }


# ==============================
# Loading
# ==============================

REQUIRED_FIELDS = ("user_id", "item_id", "title", "timestamp")


def _infer_format(path: Path) -> str:
    return "jsonl" if path.suffix.lower() in {".jsonl", ".json", ".ndjson"} else "tsv"


def _parse_timestamp(raw, line_number: int) -> int:
    if raw is None or (isinstance(raw, str) and not raw.strip()):
        raise CorpusParseError(line_number, "missing timestamp")
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise CorpusParseError(line_number, f"timestamp {raw!r} is not a number") from None
    if value != int(value):
        raise CorpusParseError(line_number, f"timestamp {raw!r} is not whole seconds")
    return int(value)


def _iter_tsv(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
        for line_number, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if line_number == 1 and [c.strip() for c in row[:4]] == list(REQUIRED_FIELDS):
                continue  # header
            if len(row) != 4:
                raise CorpusParseError(line_number, f"expected 4 tab-separated columns, got {len(row)}")
            user_id, item_id, title, timestamp = (cell.strip() for cell in row)
            yield line_number, user_id, item_id, title, timestamp


def _iter_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(line_number, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusParseError(line_number, "record is not an object")
            missing = [k for k in REQUIRED_FIELDS if k not in record]
            if missing:
                raise CorpusParseError(line_number, f"missing field(s) {', '.join(missing)}")
            yield (line_number, str(record["user_id"]), str(record["item_id"]),
                   str(record["title"]), record["timestamp"])


def load_interactions(path: Path, format: Optional[Literal["tsv", "jsonl"]] = None) -> Tuple[InteractionLog, ItemCatalog]:
    """
    Read interactions and build the item catalog.

    Returns:
        (InteractionLog, ItemCatalog): every event kept; catalog indices in first-seen order.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    rows_iter = _iter_jsonl(path) if fmt == "jsonl" else _iter_tsv(path)

    rows: List[Tuple[str, str, int]] = []
    titles: Dict[str, str] = {}
    for line_number, user_id, item_id, title, raw_ts in rows_iter:
        if not user_id or not item_id:
            raise CorpusParseError(line_number, "empty user_id or item_id")
        if not title.strip():
            raise CorpusParseError(line_number, f"empty title for item {item_id}")
        timestamp = _parse_timestamp(raw_ts, line_number)
        known = titles.get(item_id)
        if known is None:
            titles[item_id] = title
        elif known != title:
            raise CatalogIntegrityError(
                f"line {line_number}: item {item_id} has conflicting titles {known!r} and {title!r}"
            )
        rows.append((user_id, item_id, timestamp))

    catalog = ItemCatalog([CatalogItem(i, item_id, t) for i, (item_id, t) in enumerate(titles.items(), start=1)])
    log = InteractionLog.from_rows(rows)
    logger.info(f"✅ Loaded {len(log)} events, {len(catalog)} items from {path.name}")
    return log, catalog


# ==============================
# Filtering and splitting
# ==============================

def kcore_filter(log: InteractionLog, min_interactions: int) -> InteractionLog:
    """Alternate user/item removal until every survivor has ``min_interactions`` events."""
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")

    events = log.events
    rounds = 0
    while True:
        rounds += 1
        before = len(events)
        user_counts = events["user_id"].map(events["user_id"].value_counts())
        events = events[user_counts >= min_interactions]
        item_counts = events["item_id"].map(events["item_id"].value_counts())
        events = events[item_counts >= min_interactions]
        if len(events) == before:
            break

    logger.info(
        f"✅ {min_interactions}-core filter kept {len(events)}/{len(log)} events after {rounds} round(s)"
    )
    return InteractionLog(events.reset_index(drop=True))


def leave_one_out_split(log: InteractionLog, catalog: ItemCatalog) -> SplitDataset:
    """
    Per user: most recent event -> test, second most recent -> valid, rest -> train.
    Users with fewer than 3 events keep everything in train.
    """
    users: Dict[str, UserSplit] = {}
    ordered = log.sorted_events()
    first_seen = {u: pos for pos, u in enumerate(log.users)}
    for user_id, group in sorted(ordered.groupby("user_id", sort=False), key=lambda g: first_seen[g[0]]):
        sequence = [catalog.index_of(i) for i in group["item_id"]]
        if len(sequence) < 3:
            users[user_id] = UserSplit(train=tuple(sequence))
        else:
            users[user_id] = UserSplit(train=tuple(sequence[:-2]), valid=sequence[-2], test=sequence[-1])

    short = sum(1 for s in users.values() if not s.has_targets)
    if short:
        logger.warning(f"⚠️ {short} user(s) with < 3 events kept for training only")
    return SplitDataset(users=users, item_count=len(catalog))


def build_fixed_sequence(indices: Sequence[int], n: int) -> PaddedSequence:
    """Keep the last ``n`` items, left-padding with 0 when shorter."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(indices) == 0:
        raise ValueError("cannot build a sequence from an empty history")
    tail = list(indices)[-n:]
    pad = n - len(tail)
    padded = np.array([PAD_INDEX] * pad + tail, dtype=np.int64)
    mask = np.array([False] * pad + [True] * len(tail), dtype=bool)
    return PaddedSequence(indices=padded, valid_mask=mask)


def corpus_statistics(log: InteractionLog) -> CorpusStatistics:
    users = log.events["user_id"].nunique()
    items = log.events["item_id"].nunique()
    actions = len(log)
    density = actions / (users * items) if users and items else 0.0
    return CorpusStatistics(
        users=users,
        items=items,
        actions=actions,
        avg_actions_per_user=actions / users if users else 0.0,
        avg_actions_per_item=actions / items if items else 0.0,
        sparsity=1.0 - density if users and items else 0.0,
    )


# ==============================
# Artifacts
# ==============================

def write_log_jsonl(log: InteractionLog, path: Path) -> Path:
    records = (
        {"user_id": r.user_id, "item_id": r.item_id, "timestamp": int(r.timestamp)}
        for r in log.events.itertuples(index=False)
    )
    return write_jsonl(path, records)


def write_split_jsonl(split: SplitDataset, path: Path) -> Path:
    records = (
        {"user_id": u, "train": list(s.train), "valid": s.valid, "test": s.test}
        for u, s in split.users.items()
    )
    return write_jsonl(path, records)


def read_split_jsonl(path: Path, item_count: int) -> SplitDataset:
    users = {
        r["user_id"]: UserSplit(train=tuple(r["train"]), valid=r["valid"], test=r["test"])
        for r in read_jsonl(path)
    }
    return SplitDataset(users=users, item_count=item_count)


def write_catalog_jsonl(catalog: ItemCatalog, path: Path) -> Path:
    records = ({"item_index": c.index, "item_id": c.item_id, "title": c.title} for c in catalog.items)
    return write_jsonl(path, records)


def read_catalog_jsonl(path: Path) -> ItemCatalog:
    return ItemCatalog([CatalogItem(r["item_index"], r["item_id"], r["title"]) for r in read_jsonl(path)])
