# text_encoder.py

"""
Title and preference text encoders, the persistent embedding cache, and the
item embedding matrix M.

Cache layout (one directory per encoder name)::

    <cache_dir>/<encoder-name>/index.json   {"encoder", "dim", "keys": {sha256(text): row}}
    <cache_dir>/<encoder-name>/vectors.bin  float32 rows, append-only

Vectors always pass through float32 before being returned, so a cold encode and a
warm (cached) encode give bit-identical matrices.
"""

import json
import os
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import requests

from corpus import ItemCatalog
from errors import ConfigurationError, EncoderError, TextValidationError
from logger import logger
from utils import clean_filename, stable_hash, stable_int

ENCODER_ENDPOINT_ENV = "LANE_ENCODER_ENDPOINT"


# ==============================
# Encoders
# ==============================

class TextEncoder:
    """Handle to a frozen text encoder: ``name``, output ``dim`` and whether it is deterministic."""

    name: str
    dim: int
    deterministic: bool = True

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


class MockTextEncoder(TextEncoder):
    """
    Unit-norm vector per text, drawn from a normal distribution seeded by
    sha256(seed, text). Pure function of (text, seed, dim); identical on every machine.
    """

    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.name = f"mock-d{dim}-s{seed}"

    def encode_one(self, text: str) -> np.ndarray:
        rng = np.random.default_rng(stable_int("mock-encoder", self.seed, text))
        vector = rng.standard_normal(self.dim)
        return vector / np.linalg.norm(vector)

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.encode_one(t) for t in texts]) if texts else np.zeros((0, self.dim))


@lru_cache(maxsize=4)
def _load_sentence_transformer(model_name: str, device: Optional[str]):
    from sentence_transformers import SentenceTransformer

    logger.info(f"Loading embedding model: {model_name}")
    return SentenceTransformer(model_name, device=device)


class SentenceTransformerEncoder(TextEncoder):
    """Pretrained sentence encoder (all-MiniLM-L6-v2 gives d = 384), used frozen."""

    def __init__(self, model_name: str, dim: int, batch_size: int = 64, device: Optional[str] = None):
        self.model_name = model_name
        self.name = model_name
        self.dim = dim
        self.batch_size = batch_size
        self.device = device

    @property
    def model(self):
        model = _load_sentence_transformer(self.model_name, self.device)
        model_dim = model.get_sentence_embedding_dimension()
        if model_dim != self.dim:
            raise ConfigurationError(
                f"encoder {self.model_name} outputs d={model_dim}, config says encoder.dim={self.dim}"
            )
        return model

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        return self.model.encode(
            list(texts),
            batch_size=min(self.batch_size, max(len(texts), 1)),
            show_progress_bar=False,
            convert_to_numpy=True,
            normalize_embeddings=False,
        )


class RemoteTextEncoder(TextEncoder):
    """POSTs ``{"texts": [...]}`` to an HTTP endpoint returning ``{"embeddings": [[...]]}``."""

    def __init__(self, endpoint: str, dim: int, name: str = "remote", timeout: float = 60.0):
        self.endpoint = endpoint
        self.dim = dim
        self.name = name
        self.timeout = timeout

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        response = requests.post(self.endpoint, json={"texts": list(texts)}, timeout=self.timeout)
        response.raise_for_status()
        vectors = np.asarray(response.json()["embeddings"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dim):
            raise ConfigurationError(
                f"remote encoder returned shape {vectors.shape}, expected {(len(texts), self.dim)}"
            )
        return vectors


def build_text_encoder(encoder_config) -> TextEncoder:
    if encoder_config.name == "mock":
        return MockTextEncoder(dim=encoder_config.dim, seed=encoder_config.seed)
    if encoder_config.name == "sentence-transformers":
        return SentenceTransformerEncoder(encoder_config.model, encoder_config.dim, encoder_config.batch_size)
    endpoint = os.getenv(ENCODER_ENDPOINT_ENV)
    if not endpoint:
        raise ConfigurationError(f"encoder.name = 'remote' needs {ENCODER_ENDPOINT_ENV} to be set")
    return RemoteTextEncoder(endpoint, encoder_config.dim, name=f"remote-{encoder_config.model}")


# ==============================
# Cache
# ==============================

class EmbeddingCache:
    """Single-writer / many-reader vector cache keyed by (encoder name, text hash)."""

    def __init__(self, cache_dir: Path, encoder: TextEncoder):
        self.directory = Path(cache_dir) / clean_filename(encoder.name)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.index_path = self.directory / "index.json"
        self.vectors_path = self.directory / "vectors.bin"
        self.encoder_name = encoder.name
        self.dim = encoder.dim
        self._lock = threading.Lock()
        self._keys: Dict[str, int] = {}
        self._vectors = np.zeros((0, self.dim), dtype=np.float32)
        self._load()

    def _load(self) -> None:
        if not self.index_path.exists():
            return
        with open(self.index_path, "r", encoding="utf-8") as f:
            index = json.load(f)
        if index.get("dim") != self.dim:
            raise ConfigurationError(
                f"cache {self.directory} holds d={index.get('dim')}, encoder has d={self.dim}"
            )
        self._keys = {k: int(v) for k, v in index["keys"].items()}
        raw = np.fromfile(self.vectors_path, dtype=np.float32)
        self._vectors = raw.reshape(-1, self.dim)
        logger.debug(f"Embedding cache {self.directory} loaded with {len(self._keys)} vectors")

    def __len__(self) -> int:
        return len(self._keys)

    def get(self, text: str) -> Optional[np.ndarray]:
        row = self._keys.get(stable_hash(text))
        return None if row is None else self._vectors[row]

    def put_many(self, texts: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=np.float32).reshape(-1, self.dim)
        with self._lock:
            new_rows = []
            for text, vector in zip(texts, vectors):
                key = stable_hash(text)
                if key in self._keys:
                    continue
                self._keys[key] = len(self._vectors) + len(new_rows)
                new_rows.append(vector)
            if not new_rows:
                return
            block = np.stack(new_rows).astype(np.float32)
            with open(self.vectors_path, "ab") as f:
                block.tofile(f)
            self._vectors = np.concatenate([self._vectors, block])
            tmp = self.index_path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump({"encoder": self.encoder_name, "dim": self.dim, "keys": self._keys}, f)
            os.replace(tmp, self.index_path)


def _encode_with_cache(texts: Sequence[str], encoder: TextEncoder, cache: Optional[EmbeddingCache],
                       labels: Optional[Sequence[str]] = None) -> np.ndarray:
    labels = labels or texts
    out = np.zeros((len(texts), encoder.dim), dtype=np.float32)
    missing: Dict[str, List[int]] = {}
    for row, text in enumerate(texts):
        cached = cache.get(text) if cache is not None else None
        if cached is None:
            missing.setdefault(text, []).append(row)
        else:
            out[row] = cached

    if missing:
        pending = list(missing)
        try:
            vectors = np.asarray(encoder.encode_batch(pending), dtype=np.float64)
        except Exception as exc:
            # locate the offending text one by one so the error names the item
            for text in pending:
                try:
                    encoder.encode_batch([text])
                except Exception as single_exc:
                    raise EncoderError(labels[missing[text][0]], single_exc) from single_exc
            raise EncoderError(labels[missing[pending[0]][0]], exc) from exc
        for text, vector in zip(pending, vectors):
            if not np.all(np.isfinite(vector)):
                raise EncoderError(labels[missing[text][0]], ValueError("non-finite embedding"))
            for row in missing[text]:
                out[row] = vector.astype(np.float32)
        if cache is not None:
            cache.put_many(pending, vectors)
        logger.debug(f"Encoded {len(pending)} new text(s) with {encoder.name}")
    return out


# ==============================
# Operations
# ==============================

@dataclass(frozen=True)
class EmbeddingMatrix:
    """(|I|+1) x d matrix M; row 0 is the all-zero pad row."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def item_count(self) -> int:
        return int(self.values.shape[0]) - 1

    def save(self, path: Path) -> Path:
        np.save(Path(path), self.values)
        return Path(path)

    @classmethod
    def load(cls, path: Path) -> "EmbeddingMatrix":
        return cls(np.load(Path(path)))


def encode_texts(texts: Sequence[str], encoder: TextEncoder, cache: Optional[EmbeddingCache] = None) -> np.ndarray:
    """Encode non-blank texts; row i corresponds to texts[i]."""
    if not texts:
        raise TextValidationError("no texts to encode")
    for position, text in enumerate(texts):
        if not isinstance(text, str) or not text.strip():
            raise TextValidationError(f"text at position {position} is blank")
    return _encode_with_cache(list(texts), encoder, cache)


def encode_titles(catalog: ItemCatalog, encoder: TextEncoder, cache: Optional[EmbeddingCache] = None) -> EmbeddingMatrix:
    """Build M: row k is the encoding of item k's title, row 0 stays zero."""
    if len(catalog) == 0:
        raise TextValidationError("catalog is empty")
    labels = [f"{item.item_id} ({item.title})" for item in catalog.items]
    vectors = _encode_with_cache(catalog.titles, encoder, cache, labels=labels)
    values = np.zeros((len(catalog) + 1, encoder.dim), dtype=np.float32)
    values[1:] = vectors
    logger.info(f"✅ Embedding matrix {values.shape} built with {encoder.name}")
    return EmbeddingMatrix(values)
