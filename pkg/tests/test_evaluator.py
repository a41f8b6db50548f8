# tests/test_evaluator.py
import math

import numpy as np
import pandas as pd
import pytest

from corpus import SplitDataset, UserSplit
from errors import EvaluationProtocolError
from evaluator import (
    build_eval_candidates,
    collect_ranks,
    compute_metrics,
    evaluate_model,
    rank_in_candidates,
    rank_of_target,
    write_per_user_csv,
)
from recommender import LaneRecommender


def _baseline(M, n=6):
    return LaneRecommender(M, n=n, blocks=1, heads=1, dropout=0.0, alignment=False)


# ------------------------------
# Candidates
# ------------------------------

def test_candidates_are_forced_when_pool_is_exactly_100():
    user = UserSplit(train=(1,), valid=2, test=3)
    candidates = build_eval_candidates("u1", user, "test", item_count=103, seed=0)
    assert candidates.items[0] == 3
    assert sorted(candidates.negatives) == list(range(4, 104))


def test_candidates_never_include_user_items():
    user = UserSplit(train=(5, 9, 11), valid=20, test=42)
    candidates = build_eval_candidates("u1", user, "valid", item_count=500, seed=7)
    assert len(candidates.items) == 101
    assert len(set(candidates.negatives)) == 100
    assert not set(candidates.negatives) & {5, 9, 11, 20, 42}


def test_candidates_are_fixed_per_seed_split_and_user():
    user = UserSplit(train=(1, 2), valid=3, test=4)
    a = build_eval_candidates("u1", user, "test", 400, seed=1)
    assert a == build_eval_candidates("u1", user, "test", 400, seed=1)
    assert a != build_eval_candidates("u1", user, "test", 400, seed=2)
    assert a.negatives != build_eval_candidates("u2", user, "test", 400, seed=1).negatives


def test_too_small_catalog_is_a_protocol_error():
    user = UserSplit(train=(1, 2), valid=3, test=4)
    with pytest.raises(EvaluationProtocolError):
        build_eval_candidates("u1", user, "test", item_count=50, seed=0)


def test_smaller_negative_count_is_allowed():
    user = UserSplit(train=(1, 2), valid=3, test=4)
    assert len(build_eval_candidates("u1", user, "test", 50, seed=0, num_negatives=25).items) == 26


# ------------------------------
# Ranks and metrics
# ------------------------------

def test_ties_favor_the_target():
    assert rank_of_target([1.0, 1.0, 0.5], 0) == 1
    assert rank_of_target({7: 0.2, 8: 0.9, 9: 0.2}, 7) == 2


def test_rank_matches_full_sort_oracle():
    rng = np.random.default_rng(11)
    scores = rng.normal(size=1000)
    for target in (0, 17, 999):
        order = np.argsort(-scores, kind="stable")
        assert rank_of_target(scores, target) == int(np.where(order == target)[0][0]) + 1


def test_rank_is_invariant_under_monotone_transform():
    scores = np.random.default_rng(3).normal(size=101)
    assert rank_of_target(scores, 0) == rank_of_target(np.exp(3 * scores) + 1, 0)


def test_ndcg_of_rank_two():
    report = compute_metrics([2], k=10)
    assert report.hr_at_k == 1.0
    assert report.ndcg_at_k == pytest.approx(1 / math.log2(3))
    assert report.ndcg_at_k == pytest.approx(0.63093, abs=1e-5)


def test_metrics_over_several_users():
    report = compute_metrics([1, 5, 11, 101], k=10)
    assert report.hr_at_k == 0.5
    assert report.ndcg_at_k == pytest.approx((1 + 1 / math.log2(6)) / 4)
    assert report.ndcg_at_k <= report.hr_at_k


def test_empty_rank_list_is_undefined():
    report = compute_metrics([], k=5)
    assert report.hr_at_k is None and report.ndcg_at_k is None
    assert not report.defined


def test_zero_rank_is_rejected():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], k=5)


# ------------------------------
# Model evaluation
# ------------------------------

def test_batched_ranks_match_single_user_ranks(random_split, item_matrix):
    model = _baseline(item_matrix)
    ranks, skipped = collect_ranks(model, random_split, "test", None, seed=5, batch_size=5)
    assert skipped == 0
    assert [r.user_id for r in ranks] == list(random_split.users)
    for r in ranks[:4]:
        user = random_split.users[r.user_id]
        candidates = build_eval_candidates(r.user_id, user, "test", random_split.item_count, seed=5)
        assert rank_in_candidates(model, user.history("test"), candidates) == r.rank


def test_evaluation_is_deterministic_and_restores_training_mode(random_split, item_matrix):
    model = _baseline(item_matrix)
    model.train()
    first = evaluate_model(model, random_split, "valid", None, seed=3).to_dict()
    second = evaluate_model(model, random_split, "valid", None, seed=3).to_dict()
    assert first == second
    assert model.training
    assert set(first["metrics"]) == {"HR@5", "NDCG@5", "HR@10", "NDCG@10"}
    assert first["user_count"] == 12


def test_alignment_model_skips_users_without_preferences(random_split, item_matrix):
    model = LaneRecommender(item_matrix, n=6, blocks=1, dropout=0.0, h=2, d_k=4)
    P = {u: np.random.default_rng(0).normal(size=(3, 8)).astype(np.float32) for u in list(random_split.users)[:5]}
    result = evaluate_model(model, random_split, "test", P, seed=0, ks=[10])
    assert result.skipped_users == 7
    assert result.reports[10].user_count == 5


def test_per_user_csv(tmp_path, random_split, item_matrix):
    result = evaluate_model(_baseline(item_matrix), random_split, "test", None, seed=0)
    frame = pd.read_csv(write_per_user_csv(result, tmp_path / "ranks.csv"))
    assert list(frame.columns) == ["user_id", "target", "rank"]
    assert len(frame) == 12
    assert frame["rank"].between(1, 101).all()


def test_untrained_model_scores_at_chance_level():
    rng = np.random.default_rng(21)
    users = {}
    for u in range(600):
        items = rng.choice(np.arange(1, 301), size=6, replace=False).tolist()
        users[f"n{u}"] = UserSplit(train=tuple(items[:4]), valid=items[4], test=items[5])
    split = SplitDataset(users, item_count=300)
    M = rng.normal(size=(301, 8)).astype(np.float32)
    M[0] = 0

    hr = evaluate_model(_baseline(M), split, "test", None, seed=0, ks=[10]).metric("HR", 10)
    # 10 of 101 candidates
    assert 0.05 <= hr <= 0.15
