# harness.py

"""
Pipeline commands. Each command reads the artifact directories of the commands
before it and writes its own directory under ``output_dir``:

    prepare        -> prepared/      catalog, split, statistics, title embeddings M
    extract-prefs  -> preferences/   preference cache (JSONL) and P^u embeddings
    train          -> model/         model.pt, manifest.json, train_log.jsonl
    evaluate       -> metrics/       metrics.json (+ per-user CSVs)
    explain        -> explanations/  explanations.jsonl
    sweep          -> sweep/<key>/   metrics.csv and one plot per metric
    synthetic      -> corpus.input_path

Every directory carries a manifest.json with the command, config hash and code version.
"""

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

import explainer  # noqa: E402,F401  (registers the explanation mock responder)
from config import LANE_VERSION, RunConfig, config_hash, with_override  # noqa: E402
from corpus import (  # noqa: E402
    ItemCatalog,
    SplitDataset,
    corpus_statistics,
    kcore_filter,
    leave_one_out_split,
    load_interactions,
    read_catalog_jsonl,
    read_split_jsonl,
    write_catalog_jsonl,
    write_log_jsonl,
    write_split_jsonl,
)
from errors import ConfigurationError, MissingArtifactError  # noqa: E402
from evaluator import evaluate_model, write_per_user_csv  # noqa: E402
from explainer import ExplanationStore, explain_users  # noqa: E402
from llm_clients import build_llm_client  # noqa: E402
from logger import logger  # noqa: E402
from paths import (  # noqa: E402
    EXPLANATIONS_SUBDIR,
    METRICS_SUBDIR,
    MODEL_SUBDIR,
    PREFERENCES_SUBDIR,
    PREPARED_SUBDIR,
    ROOT_DIR,
    SWEEP_SUBDIR,
)
from preference_llm import DroppedUser, PreferenceCache, PreferenceSet, extract_all_preferences  # noqa: E402
from recommender import encode_preference_sets, relative_improvement  # noqa: E402
from synthetic import generate_synthetic_corpus, write_synthetic_corpus  # noqa: E402
from text_encoder import EmbeddingCache, EmbeddingMatrix, build_text_encoder, encode_titles  # noqa: E402
from trainer import load_checkpoint, save_checkpoint, train_model  # noqa: E402
from utils import clean_filename, write_json  # noqa: E402

MANIFEST_FILE = "manifest.json"
SWEEP_METRICS = ("HR@5", "HR@10", "NDCG@5", "NDCG@10")


# ==============================
# Paths and manifests
# ==============================

def resolve_path(path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else ROOT_DIR / path


def artifact_dir(config: RunConfig, subdir: str) -> Path:
    return resolve_path(config.output_dir) / subdir


def write_manifest(directory: Path, command: str, config: RunConfig, **extra) -> Path:
    """Merge {command, config_hash, code_version} into the directory's manifest.json."""
    path = Path(directory) / MANIFEST_FILE
    manifest = {}
    if path.exists():
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    manifest.update({"command": command, "config_hash": config_hash(config), "code_version": LANE_VERSION})
    manifest.update(extra)
    return write_json(path, manifest)


def _require(path: Path, prerequisite: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path), prerequisite)
    return path


def _fresh_dir(directory: Path) -> Path:
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    return directory


def _embedding_cache(config: RunConfig, encoder) -> Optional[EmbeddingCache]:
    if not config.encoder.cache_dir:
        return None
    return EmbeddingCache(resolve_path(config.encoder.cache_dir), encoder)


# ==============================
# Artifact loaders
# ==============================

@dataclass
class PreparedData:
    catalog: ItemCatalog
    split: SplitDataset
    M: np.ndarray


@dataclass
class PreferenceData:
    sets: Dict[str, PreferenceSet]
    dropped: Dict[str, DroppedUser]
    embeddings: Dict[str, np.ndarray]


def load_prepared(config: RunConfig) -> PreparedData:
    directory = artifact_dir(config, PREPARED_SUBDIR)
    catalog = read_catalog_jsonl(_require(directory / "catalog.jsonl", "prepare"))
    split = read_split_jsonl(_require(directory / "split.jsonl", "prepare"), len(catalog))
    M = EmbeddingMatrix.load(_require(directory / "embeddings.npy", "prepare")).values
    return PreparedData(catalog, split, M)


def load_preferences(config: RunConfig, required: bool = True) -> Optional[PreferenceData]:
    directory = artifact_dir(config, PREFERENCES_SUBDIR)
    cache_path, embeddings_path = directory / "preferences.jsonl", directory / "embeddings.npz"
    if not required and not embeddings_path.exists():
        return None
    _require(cache_path, "extract-prefs")
    _require(embeddings_path, "extract-prefs")
    cache = PreferenceCache(cache_path)
    with np.load(embeddings_path) as archive:
        user_ids = [str(u) for u in archive["user_ids"]]
        embeddings = {u: archive["P"][row] for row, u in enumerate(user_ids)}
    sets = {u: s for u, s in cache.preference_sets().items() if u in embeddings}
    return PreferenceData(sets, cache.dropped(), embeddings)


def _restrict_to_kept_users(split: SplitDataset, preferences: Optional[PreferenceData]) -> SplitDataset:
    if preferences is None or not preferences.dropped:
        return split
    return split.restricted_to(u for u in split.users if u not in preferences.dropped)


# ==============================
# Commands
# ==============================

def prepare(config: RunConfig) -> Path:
    input_path = resolve_path(config.corpus.input_path)
    if not input_path.is_file():
        raise ConfigurationError(f"corpus.input_path {input_path} does not exist")
    directory = _fresh_dir(artifact_dir(config, PREPARED_SUBDIR))
    log, catalog = load_interactions(input_path, config.corpus.format)
    log = kcore_filter(log, config.corpus.min_interactions)
    if len(log) == 0:
        raise ConfigurationError(f"no interactions survive the {config.corpus.min_interactions}-core filter")
    catalog = catalog.restricted_to(log.items)
    split = leave_one_out_split(log, catalog)

    write_log_jsonl(log, directory / "interactions.jsonl")
    write_catalog_jsonl(catalog, directory / "catalog.jsonl")
    write_split_jsonl(split, directory / "split.jsonl")
    statistics = corpus_statistics(log).to_dict()
    write_json(directory / "statistics.json", statistics)

    encoder = build_text_encoder(config.encoder)
    encode_titles(catalog, encoder, _embedding_cache(config, encoder)).save(directory / "embeddings.npy")
    write_manifest(directory, "prepare", config, encoder=encoder.name, statistics=statistics)
    logger.info(f"📝 Prepared {statistics['users']} users / {statistics['items']} items in {directory}")
    return directory


def extract_prefs(config: RunConfig) -> Path:
    prepared = load_prepared(config)
    directory = artifact_dir(config, PREFERENCES_SUBDIR)
    directory.mkdir(parents=True, exist_ok=True)
    client = build_llm_client(config.llm)
    cache = PreferenceCache(directory / "preferences.jsonl")
    sets, dropped = extract_all_preferences(
        prepared.split, prepared.catalog, client, config.preferences.m, cache=cache,
        max_titles=config.sequence.n,
    )

    encoder = build_text_encoder(config.encoder)
    embeddings = encode_preference_sets(sets, encoder, _embedding_cache(config, encoder))
    user_ids = list(embeddings)
    P = np.stack([embeddings[u] for u in user_ids]) if user_ids else np.zeros((0, config.preferences.m, encoder.dim))
    np.savez(directory / "embeddings.npz", user_ids=np.array(user_ids, dtype=str), P=P)
    write_manifest(directory, "extract-prefs", config, llm=client.name, llm_calls=client.calls,
                   users=len(sets), dropped=len(dropped))
    return directory


def train(config: RunConfig) -> Path:
    prepared = load_prepared(config)
    preferences = load_preferences(config, required=config.alignment.enabled)
    split = _restrict_to_kept_users(prepared.split, preferences)
    directory = _fresh_dir(artifact_dir(config, MODEL_SUBDIR))
    result = train_model(
        split, prepared.M, None if preferences is None else preferences.embeddings, config,
        log_path=directory / "train_log.jsonl",
    )
    save_checkpoint(result, directory, config)
    write_manifest(directory, "train", config)
    return directory


def _evaluate(config: RunConfig) -> Dict[str, dict]:
    prepared = load_prepared(config)
    model, _ = load_checkpoint(_require(artifact_dir(config, MODEL_SUBDIR), "train"))
    preferences = load_preferences(config, required=model.uses_alignment)
    split = _restrict_to_kept_users(prepared.split, preferences)
    embeddings = None if preferences is None else preferences.embeddings

    directory = artifact_dir(config, METRICS_SUBDIR)
    directory.mkdir(parents=True, exist_ok=True)
    report = {}
    for split_name in ("valid", "test"):
        result = evaluate_model(model, split, split_name, embeddings, config.seed,
                                ks=config.evaluator.ks, num_negatives=config.evaluator.num_negatives)
        report[split_name] = result.to_dict()
        if config.evaluator.per_user_csv:
            write_per_user_csv(result, directory / f"per_user_{split_name}.csv")
    return report


def evaluate(config: RunConfig) -> Path:
    report = _evaluate(config)
    directory = artifact_dir(config, METRICS_SUBDIR)
    write_json(directory / "metrics.json", report)
    write_manifest(directory, "evaluate", config)
    logger.info(f"✅ Test metrics: {report['test']['metrics']}")
    return directory


def explain(config: RunConfig) -> Path:
    prepared = load_prepared(config)
    model, _ = load_checkpoint(_require(artifact_dir(config, MODEL_SUBDIR), "train"))
    if not model.uses_alignment:
        raise ConfigurationError("explanations need a model trained with alignment.enabled = true")
    preferences = load_preferences(config)
    split = _restrict_to_kept_users(prepared.split, preferences)

    directory = _fresh_dir(artifact_dir(config, EXPLANATIONS_SUBDIR))
    store = ExplanationStore(directory / "explanations.jsonl")
    records = explain_users(
        model, split, prepared.catalog, preferences.sets, preferences.embeddings,
        build_llm_client(config.llm), config.seed, max_users=config.explain.max_users,
        num_negatives=config.evaluator.num_negatives, store=store,
    )
    write_manifest(directory, "explain", config, records=len(records),
                   available=sum(1 for r in records if r.available))
    return directory


def run_pipeline(config: RunConfig) -> Dict[str, dict]:
    """prepare -> extract-prefs -> train -> evaluate; returns the metrics report."""
    prepare(config)
    if config.alignment.enabled:
        extract_prefs(config)
    train(config)
    evaluate(config)
    with open(artifact_dir(config, METRICS_SUBDIR) / "metrics.json", "r", encoding="utf-8") as f:
        return json.load(f)


def _sweep_row(key: str, value, report: Dict[str, dict]) -> dict:
    test = report["test"]
    row = {"parameter": key, "value": value, "user_count": test["user_count"]}
    row.update({name: test["metrics"].get(name) for name in SWEEP_METRICS})
    return row


def plot_sweep(frame: pd.DataFrame, key: str, directory: Path) -> List[Path]:
    paths = []
    labels = [str(v) for v in frame["value"]]
    for metric in SWEEP_METRICS:
        values = pd.to_numeric(frame[metric], errors="coerce").fillna(0.0)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(labels, values, marker="o")
        ax.set_xlabel(key)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs {key}")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = directory / f"{clean_filename(metric)}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def sweep(config: RunConfig) -> Path:
    """Run the full pipeline once per value of one dotted key, all other keys held fixed."""
    key = config.sweep.parameter
    if not config.sweep.values:
        raise ConfigurationError("sweep.values is empty")
    root = artifact_dir(config, SWEEP_SUBDIR)
    directory = _fresh_dir(root / clean_filename(key))

    rows = []
    reports = {}
    for value in config.sweep.values:
        point = with_override(config, key, value)
        point = with_override(point, "output_dir", str(directory / clean_filename(f"{key}={value}")))
        logger.info(f"🔁 Sweep {key} = {value}")
        reports[str(value)] = run_pipeline(point)
        rows.append(_sweep_row(key, value, reports[str(value)]))

    frame = pd.DataFrame(rows)
    frame.to_csv(directory / "metrics.csv", index=False)
    plot_sweep(frame, key, directory)

    extra = {}
    if key == "alignment.enabled" and {"False", "True"} <= set(reports):
        improvement = relative_improvement(reports["False"]["test"]["metrics"], reports["True"]["test"]["metrics"])
        write_json(directory / "improvement.json", improvement)
        extra["improvement"] = improvement
    write_manifest(root, "sweep", config)
    write_manifest(directory, "sweep", config, values=[str(v) for v in config.sweep.values], **extra)
    return directory


def synthetic(config: RunConfig) -> Path:
    settings = config.synthetic
    rows = generate_synthetic_corpus(settings.num_users, settings.num_items, settings.min_length,
                                     settings.max_length, seed=config.seed)
    path = write_synthetic_corpus(rows, resolve_path(config.corpus.input_path))
    write_manifest(path.parent, "synthetic", config)
    return path


COMMANDS: Dict[str, Callable[[RunConfig], Path]] = {
    "prepare": prepare,
    "extract-prefs": extract_prefs,
    "train": train,
    "evaluate": evaluate,
    "explain": explain,
    "sweep": sweep,
    "synthetic": synthetic,
}


def run_command(command: str, config: RunConfig) -> Path:
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    with logger.contextualize(command=command):
        logger.info(f"▶️ lane {command} (config {config_hash(config)[:12]})")
        return COMMANDS[command](config)
