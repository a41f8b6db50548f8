# trainer.py

"""
Training loop: next-item positives, one fresh negative per position per epoch,
masked binary cross-entropy, Adam, early stopping on validation NDCG@10, and
checkpoint save/load.
"""

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from corpus import SplitDataset, build_fixed_sequence
from errors import ConfigurationError, MissingArtifactError, SamplingError, TrainingDivergedError
from evaluator import evaluate_model
from logger import logger
from recommender import LaneRecommender
from utils import append_jsonl, seed_everything, write_json

CHECKPOINT_FILE = "model.pt"
MANIFEST_FILE = "manifest.json"


# ==============================
# Scoring, sampling, loss
# ==============================

def score_candidate(f: torch.Tensor, m_i: torch.Tensor) -> torch.Tensor:
    """r = f . m_i over the last axis."""
    f, m_i = torch.as_tensor(f), torch.as_tensor(m_i)
    if f.shape[-1] != m_i.shape[-1]:
        raise ConfigurationError(f"feature width {f.shape[-1]} != item embedding width {m_i.shape[-1]}")
    return (f * m_i).sum(-1)


def _owned_in_range(item_count: int, user_items: Iterable[int]) -> set:
    return {int(i) for i in user_items if 1 <= int(i) <= item_count}


def sample_negatives(item_count: int, user_items: Iterable[int], size: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``size`` independent uniform draws from {1..item_count} minus ``user_items`` (rejection sampling)."""
    owned = _owned_in_range(item_count, user_items)
    if item_count - len(owned) < 1:
        raise SamplingError(f"no eligible negative among {item_count} items ({len(owned)} owned)")
    owned_array = np.fromiter(owned, dtype=np.int64)
    out = rng.integers(1, item_count + 1, size=size)
    rejected = np.isin(out, owned_array)
    while rejected.any():
        out[rejected] = rng.integers(1, item_count + 1, size=int(rejected.sum()))
        rejected = np.isin(out, owned_array)
    return out


def sample_negative(item_count: int, user_items: Iterable[int], rng: np.random.Generator) -> int:
    return int(sample_negatives(item_count, user_items, 1, rng)[0])


def sequence_bce_loss(pos_scores: torch.Tensor, neg_scores: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
    """-sum over valid positions of log sigma(r_pos) + log(1 - sigma(r_neg)), via log-sigmoid."""
    if pos_scores.shape != neg_scores.shape or pos_scores.shape != valid_mask.shape:
        raise ConfigurationError("positive scores, negative scores and mask must have the same shape")
    mask = valid_mask.to(pos_scores.dtype)
    return -((F.logsigmoid(pos_scores) + F.logsigmoid(-neg_scores)) * mask).sum()


# ==============================
# Batches
# ==============================

@dataclass
class TrainingData:
    user_ids: List[str]
    inputs: np.ndarray
    positives: np.ndarray
    train_items: List[np.ndarray]
    P: Optional[np.ndarray]


def build_training_data(split: SplitDataset, n: int,
                        preference_embeddings: Optional[Mapping[str, np.ndarray]],
                        needs_preferences: bool) -> TrainingData:
    """Input = train[:-1], positive = train[1:], both left-padded to n. Valid and test items never enter."""
    user_ids, inputs, positives, owned = [], [], [], []
    missing = 0
    for user_id, user_split in split.users.items():
        train = list(user_split.train)
        if len(train) < 2:
            continue
        if needs_preferences and user_id not in (preference_embeddings or {}):
            missing += 1
            continue
        user_ids.append(user_id)
        inputs.append(build_fixed_sequence(train[:-1], n).indices)
        positives.append(build_fixed_sequence(train[1:], n).indices)
        owned.append(np.asarray(sorted(set(train)), dtype=np.int64))
    if missing:
        logger.warning(f"⚠️ {missing} user(s) left out of training: no preference embeddings")
    if not user_ids:
        raise ConfigurationError("no user has a training prefix of at least two items")

    P = None
    if needs_preferences:
        P = np.stack([np.asarray(preference_embeddings[u], dtype=np.float32) for u in user_ids])
    return TrainingData(user_ids, np.stack(inputs), np.stack(positives), owned, P)


def sample_epoch_negatives(data: TrainingData, item_count: int, rng: np.random.Generator) -> np.ndarray:
    negatives = np.zeros_like(data.positives)
    for row, owned in enumerate(data.train_items):
        valid = data.positives[row] != 0
        negatives[row, valid] = sample_negatives(item_count, owned, int(valid.sum()), rng)
    return negatives


# ==============================
# Training
# ==============================

@dataclass
class TrainingResult:
    model: LaneRecommender
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_ndcg10: Optional[float] = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def train_model(split: SplitDataset, M: np.ndarray, preference_embeddings: Optional[Mapping[str, np.ndarray]],
                config, model: Optional[LaneRecommender] = None,
                log_path: Optional[Path] = None) -> TrainingResult:
    """Optimize every trainable parameter with Adam; keep the state with the best validation NDCG@10."""
    trainer = config.trainer
    rng = seed_everything(config.seed)
    if model is None:
        model = LaneRecommender.from_config(config, M)
    dtype = model.M.dtype

    data = build_training_data(split, model.hparams["n"], preference_embeddings, model.uses_alignment)
    inputs = torch.as_tensor(data.inputs)
    positives = torch.as_tensor(data.positives)
    P_all = None if data.P is None else torch.as_tensor(data.P, dtype=dtype)

    parameters = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(parameters, lr=trainer.learning_rate,
                                 betas=tuple(trainer.adam_betas), eps=trainer.adam_eps)
    logger.info(
        f"🚀 Training on {len(data.user_ids)} user(s), {len(parameters)} parameter tensors, "
        f"alignment={'on' if model.uses_alignment else 'off'}"
    )

    result = TrainingResult(model=model)
    best_state = copy.deepcopy(model.state_dict())
    best_score: Optional[float] = None
    epochs_without_improvement = 0

    for epoch in range(1, trainer.max_epochs + 1):
        model.train()
        negatives = torch.as_tensor(sample_epoch_negatives(data, split.item_count, rng))
        order = rng.permutation(len(data.user_ids))
        epoch_loss = 0.0

        for batch, start in enumerate(range(0, len(order), trainer.batch_size), start=1):
            rows = torch.as_tensor(order[start:start + trainer.batch_size])
            pos = positives[rows]
            features = model(inputs[rows], None if P_all is None else P_all[rows])
            loss = sequence_bce_loss(
                model.score_items(features, pos),
                model.score_items(features, negatives[rows]),
                pos != 0,
            )
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, batch, float(loss))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss)

        valid = evaluate_model(model, split, "valid", preference_embeddings, config.seed,
                               ks=[10], num_negatives=config.evaluator.num_negatives)
        ndcg, hr = valid.metric("NDCG", 10), valid.metric("HR", 10)
        record = {"epoch": epoch, "train_loss": epoch_loss, "valid_ndcg10": ndcg, "valid_hr10": hr}
        result.history.append(record)
        if log_path is not None:
            append_jsonl(log_path, record)

        score = ndcg if ndcg is not None else -math.inf
        if best_score is None or score > best_score:
            best_score = score
            best_state = copy.deepcopy(model.state_dict())
            result.best_epoch = epoch
            result.best_valid_ndcg10 = ndcg
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1

        logger.debug(f"Epoch {epoch}: loss={epoch_loss:.4f} valid NDCG@10={ndcg} HR@10={hr}")
        if epochs_without_improvement >= trainer.patience:
            logger.info(f"⏹️ Early stop at epoch {epoch} (best epoch {result.best_epoch})")
            break

    model.load_state_dict(best_state)
    logger.info(f"✅ Training done: best epoch {result.best_epoch}, valid NDCG@10={result.best_valid_ndcg10}")
    return result


# ==============================
# Checkpoints
# ==============================

def save_checkpoint(result: TrainingResult, directory: Path, config=None) -> Path:
    """``model.pt`` (state dict) + ``manifest.json`` (hyper-parameters, config snapshot, history)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(result.model.state_dict(), directory / CHECKPOINT_FILE)
    manifest = {
        "hparams": result.model.hparams,
        "dtype": str(result.model.M.dtype).replace("torch.", ""),
        "epoch": result.best_epoch,
        "best_valid_ndcg10": result.best_valid_ndcg10,
        "history": result.history,
    }
    if config is not None:
        manifest["config"] = config.model_dump(mode="json")
        manifest["adam"] = {"betas": list(config.trainer.adam_betas), "eps": config.trainer.adam_eps,
                            "learning_rate": config.trainer.learning_rate}
    write_json(directory / MANIFEST_FILE, manifest)
    logger.info(f"📝 Checkpoint written to {directory}")
    return directory


def load_checkpoint(directory: Path) -> Tuple[LaneRecommender, dict]:
    directory = Path(directory)
    weights, manifest_path = directory / CHECKPOINT_FILE, directory / MANIFEST_FILE
    if not weights.exists() or not manifest_path.exists():
        raise MissingArtifactError(str(weights), "train")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)

    hparams = dict(manifest["hparams"])
    placeholder = np.zeros((hparams.pop("item_count") + 1, hparams.pop("d")), dtype=np.float32)
    model = LaneRecommender(placeholder, **hparams)
    if manifest.get("dtype") == "float64":
        model = model.double()
    model.load_state_dict(torch.load(weights, map_location="cpu"))
    model.eval()
    return model, manifest
