# evaluator.py

"""
101-candidate ranking protocol: the held-out target plus 100 sampled negatives
the user never interacted with, ranked by r = f_n . M[item]. Reports HR@k and
NDCG@k for every configured k.

Ties favor the target: rank = 1 + number of candidates scoring strictly higher.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from corpus import SplitDataset, UserSplit, build_fixed_sequence
from errors import EvaluationProtocolError
from logger import logger
from utils import stable_int

Split = Literal["valid", "test"]


# ==============================
# Domain Types
# ==============================

@dataclass(frozen=True)
class EvalCandidates:
    user_id: str
    target: int
    negatives: Tuple[int, ...]

    @property
    def items(self) -> List[int]:
        """Target first, then the negatives."""
        return [self.target, *self.negatives]


@dataclass(frozen=True)
class UserRank:
    user_id: str
    target: int
    rank: int


@dataclass
class MetricsReport:
    k: int
    hr_at_k: Optional[float]
    ndcg_at_k: Optional[float]
    user_count: int
    per_user: Optional[List[UserRank]] = None

    @property
    def defined(self) -> bool:
        return self.user_count > 0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            f"HR@{self.k}": self.hr_at_k,
            f"NDCG@{self.k}": self.ndcg_at_k,
            "user_count": self.user_count,
            "defined": self.defined,
        }


@dataclass
class EvaluationResult:
    split: Split
    reports: Dict[int, MetricsReport]
    ranks: List[UserRank] = field(default_factory=list)
    skipped_users: int = 0

    def metric(self, name: str, k: int) -> Optional[float]:
        report = self.reports.get(k)
        if report is None:
            return None
        return report.hr_at_k if name.upper() == "HR" else report.ndcg_at_k

    def to_dict(self) -> dict:
        metrics = {}
        for k in sorted(self.reports):
            report = self.reports[k]
            metrics[f"HR@{k}"] = report.hr_at_k
            metrics[f"NDCG@{k}"] = report.ndcg_at_k
        user_count = len(self.ranks)
        return {
            "split": self.split,
            "metrics": metrics,
            "user_count": user_count,
            "defined": user_count > 0,
            "skipped_users": self.skipped_users,
        }


# ==============================
# Candidates and ranks
# ==============================

def build_eval_candidates(user_id: str, user_split: UserSplit, split: Split, item_count: int, seed: int,
                          num_negatives: int = 100) -> EvalCandidates:
    """Target plus ``num_negatives`` distinct uniform negatives outside the user's items; fixed per (seed, split, user)."""
    target = user_split.target(split)
    if target is None:
        raise ValueError(f"user {user_id} has no {split} target")
    owned = {i for i in user_split.all_items if 1 <= i <= item_count}
    owned.add(target)
    pool = np.setdiff1d(np.arange(1, item_count + 1, dtype=np.int64), np.fromiter(owned, dtype=np.int64))
    if len(pool) < num_negatives:
        raise EvaluationProtocolError(user_id, len(pool), num_negatives)
    rng = np.random.default_rng(stable_int("eval-candidates", seed, split, user_id))
    negatives = rng.choice(pool, size=num_negatives, replace=False)
    return EvalCandidates(user_id=user_id, target=target, negatives=tuple(int(i) for i in negatives))


def rank_of_target(scores: Union[Mapping[int, float], Sequence[float], np.ndarray], target) -> int:
    """1 + count of candidates scoring strictly higher than the target."""
    if isinstance(scores, Mapping):
        target_score = scores[target]
        values = np.fromiter(scores.values(), dtype=np.float64)
    else:
        values = np.asarray(scores, dtype=np.float64)
        target_score = values[target]
    return 1 + int(np.sum(values > target_score))


def compute_metrics(ranks: Sequence[int], k: int) -> MetricsReport:
    """HR@k = mean(rank <= k); NDCG@k = mean(1/log2(rank + 1) if rank <= k else 0)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(ranks):
        return MetricsReport(k=k, hr_at_k=None, ndcg_at_k=None, user_count=0)
    if any(r < 1 for r in ranks):
        raise ValueError("ranks are 1-based")
    hits = [1.0 if r <= k else 0.0 for r in ranks]
    gains = [1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks]
    return MetricsReport(
        k=k,
        hr_at_k=sum(hits) / len(ranks),
        ndcg_at_k=sum(gains) / len(ranks),
        user_count=len(ranks),
    )


def metrics_at(ranks: Sequence[int], ks: Sequence[int]) -> Dict[int, MetricsReport]:
    return {k: compute_metrics(ranks, k) for k in sorted(set(ks))}


# ==============================
# Model evaluation
# ==============================

def rank_in_candidates(model, history: Sequence[int], candidates: EvalCandidates,
                       P: Optional[np.ndarray] = None) -> int:
    """Rank of the target among its candidates for one user (e.g. 5 of 101)."""
    n = model.hparams["n"]
    dtype = model.M.dtype
    indices = torch.as_tensor(build_fixed_sequence(history, n).indices).unsqueeze(0)
    P_t = None if P is None else torch.as_tensor(np.asarray(P), dtype=dtype).unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            f_n = model(indices, P_t)[:, -1, :]
            scores = model.score_items(f_n, torch.as_tensor([candidates.items]))[0]
    finally:
        model.train(was_training)
    return rank_of_target(scores.cpu().numpy(), 0)


def collect_ranks(model, split: SplitDataset, split_name: Split,
                  preference_embeddings: Optional[Mapping[str, np.ndarray]], seed: int,
                  num_negatives: int = 100, batch_size: int = 256) -> Tuple[List[UserRank], int]:
    """Rank every eligible user once; users without preference embeddings are skipped and counted."""
    n = model.hparams["n"]
    dtype = model.M.dtype
    needs_P = model.uses_alignment
    preference_embeddings = preference_embeddings or {}

    users: List[str] = []
    skipped = 0
    for user_id in split.eligible_users(split_name):
        if needs_P and user_id not in preference_embeddings:
            skipped += 1
            continue
        users.append(user_id)
    if skipped:
        logger.warning(f"⚠️ {skipped} user(s) skipped on {split_name}: no preference embeddings")

    ranks: List[UserRank] = []
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(users), batch_size):
                chunk = users[start:start + batch_size]
                candidates = [
                    build_eval_candidates(u, split.users[u], split_name, split.item_count, seed, num_negatives)
                    for u in chunk
                ]
                indices = torch.as_tensor(np.stack([
                    build_fixed_sequence(split.users[u].history(split_name), n).indices for u in chunk
                ]))
                P = (torch.as_tensor(np.stack([preference_embeddings[u] for u in chunk]), dtype=dtype)
                     if needs_P else None)
                f_n = model(indices, P)[:, -1, :]
                scores = model.score_items(f_n, torch.as_tensor([c.items for c in candidates]))
                higher = (scores[:, 1:] > scores[:, :1]).sum(dim=1)
                for user_id, c, count in zip(chunk, candidates, higher.tolist()):
                    ranks.append(UserRank(user_id, c.target, 1 + int(count)))
    finally:
        model.train(was_training)
    return ranks, skipped


def evaluate_model(model, split: SplitDataset, split_name: Split,
                   preference_embeddings: Optional[Mapping[str, np.ndarray]], seed: int,
                   ks: Sequence[int] = (5, 10), num_negatives: int = 100) -> EvaluationResult:
    ranks, skipped = collect_ranks(model, split, split_name, preference_embeddings, seed, num_negatives)
    reports = metrics_at([r.rank for r in ranks], ks)
    for report in reports.values():
        report.per_user = ranks
    return EvaluationResult(split=split_name, reports=reports, ranks=ranks, skipped_users=skipped)


def write_per_user_csv(result: EvaluationResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([(r.user_id, r.target, r.rank) for r in result.ranks],
                         columns=["user_id", "target", "rank"])
    frame.to_csv(path, index=False)
    return path
