
# utils.py

"""
Utility functions for hashing, JSONL files, seeding, timeouts, and secure display.
"""

import contextvars
import functools
import hashlib
import json
import random
import re
import sys
import threading
from pathlib import Path
from typing import Any, Iterable, Iterator, List

import numpy as np
import torch

from errors import LlmTimeoutError


# ==============================
# Timeout Handling (Cross-Platform)
# ==============================

def timeout(seconds: float = 30):
    """
    Cross-platform timeout decorator.
    Uses `signal` on Unix main threads and `threading.Timer` elsewhere.
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            if seconds is None or seconds <= 0:
                return func(*args, **kwargs)

            on_main_thread = threading.current_thread() is threading.main_thread()
            if sys.platform == "win32" or not on_main_thread:
                # Timer fallback: the call runs in a worker thread and we stop waiting
                result: List[Any] = [LlmTimeoutError(f"{func.__name__} timed out after {seconds}s")]

                def _target():
                    try:
                        result[0] = func(*args, **kwargs)
                    except Exception as exc:  # re-raised in the caller thread
                        result[0] = exc

                # copy the context so log records keep the bound command
                worker = threading.Thread(target=contextvars.copy_context().run, args=(_target,), daemon=True)
                worker.start()
                worker.join(seconds)
                if isinstance(result[0], Exception):
                    raise result[0]
                return result[0]
            else:
                import signal

                def _handle_timeout(signum, frame):
                    raise LlmTimeoutError(f"{func.__name__} timed out after {seconds}s")

                previous = signal.signal(signal.SIGALRM, _handle_timeout)
                signal.setitimer(signal.ITIMER_REAL, seconds)
                try:
                    return func(*args, **kwargs)
                finally:
                    signal.setitimer(signal.ITIMER_REAL, 0)
                    signal.signal(signal.SIGALRM, previous)
        return wrapper
    return decorator


# ==============================
# Hashing
# ==============================

def stable_hash(text: str) -> str:
    """SHA-256 hex digest of a UTF-8 string; stable across processes and machines."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stable_int(*parts: Any) -> int:
    """Deterministic 64-bit integer derived from the given parts (used to derive RNG seeds)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ==============================
# JSONL helpers
# ==============================

def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def append_jsonl(path: Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_jsonl(path: Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


# ==============================
# Misc
# ==============================

def seed_everything(seed: int) -> np.random.Generator:
    """Seed python, numpy and torch; return a fresh numpy Generator for the run."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def clean_filename(name: str) -> str:
    """
    Sanitizes an encoder or model name to be a safe directory name.

    Args:
        name (str): e.g. ``sentence-transformers/all-MiniLM-L6-v2``.

    Returns:
        str: A filename-safe string.
    """
    return re.sub(r'[^\w\-_.]', '_', name).strip()


def mask_api_key(key: str, visible_chars: int = 5) -> str:
    """
    Masks the middle part of an API key for secure display.

    Args:
        key (str): The API key to mask.
        visible_chars (int): Number of leading/trailing characters to show.

    Returns:
        str: Masked key.
    """
    if len(key) <= 2 * visible_chars:
        return "*" * len(key)
    return f"{key[:visible_chars]}{'*' * (len(key) - 2 * visible_chars)}{key[-visible_chars:]}"
