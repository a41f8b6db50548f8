# synthetic.py

"""
Synthetic interaction corpus with a known generating rule.

Each user walks the item ring with a fixed stride, so the next item is
prev + (prev - prev_prev) modulo the catalog size: a deterministic function of
the last two items. Titles carry a theme and a genre word derived from the item
index, plus two cadence words: a parity word that stays fixed along a stride-2
walk on an even ring, and a mod-3 word that stays fixed along a stride-3 walk
until it wraps. The mock LLM's word-frequency preferences therefore name the
user's stride.
"""

from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from converters import TSV_COLUMNS, write_interactions_tsv
from logger import logger

GENRES = ("Action", "Puzzle", "Racing", "Strategy", "Horror")
THEMES = ("Space", "Pirate", "Medieval", "Cyberpunk", "Jungle", "Arctic", "Desert", "Ocean", "Zombie", "Samurai")
PARITY_WORDS = ("Dawn", "Dusk")
TRIAD_WORDS = ("Iron", "Gold", "Jade")
STRIDES = (1, 2, 3)
START_TIMESTAMP = 1_600_000_000

Row = Tuple[str, str, str, int]


def synthetic_title(index: int) -> str:
    genre = GENRES[index % len(GENRES)]
    theme = THEMES[(index // len(GENRES)) % len(THEMES)]
    return f"{theme} {genre} {PARITY_WORDS[index % 2]} {TRIAD_WORDS[index % 3]} {index}"


def next_item(previous: int, current: int, num_items: int) -> int:
    """prev + (prev - prev_prev) on the ring 1..num_items."""
    return (2 * (current - 1) - (previous - 1)) % num_items + 1


def generate_synthetic_corpus(num_users: int = 200, num_items: int = 50, min_length: int = 8,
                              max_length: int = 20, seed: int = 0) -> List[Row]:
    """Rows ``(user_id, item_id, title, timestamp)`` in per-user time order."""
    if num_items < 3:
        raise ValueError("need at least 3 items")
    if not 3 <= min_length <= max_length:
        raise ValueError("lengths must satisfy 3 <= min_length <= max_length")
    rng = np.random.default_rng(seed)
    rows: List[Row] = []
    width = len(str(num_users))
    for user in range(1, num_users + 1):
        user_id = f"s{user:0{width}d}"
        length = int(rng.integers(min_length, max_length + 1))
        stride = int(rng.choice(STRIDES))
        sequence = [int(rng.integers(1, num_items + 1))]
        sequence.append((sequence[0] - 1 + stride) % num_items + 1)
        while len(sequence) < length:
            sequence.append(next_item(sequence[-2], sequence[-1], num_items))
        for step, item in enumerate(sequence):
            rows.append((user_id, f"g{item}", synthetic_title(item), START_TIMESTAMP + 60 * (user * max_length + step)))
    return rows


def write_synthetic_corpus(rows: List[Row], out_path: Path) -> Path:
    frame = pd.DataFrame(rows, columns=TSV_COLUMNS)
    logger.info(f"✅ Synthetic corpus: {frame['user_id'].nunique()} users, {frame['item_id'].nunique()} items")
    return write_interactions_tsv(frame, out_path)
