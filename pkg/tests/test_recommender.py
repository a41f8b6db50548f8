# tests/test_recommender.py
import numpy as np
import pytest
import torch

from errors import ConfigurationError
from preference_llm import PreferenceSet
from recommender import LaneRecommender, encode_preference_sets, relative_improvement
from text_encoder import MockTextEncoder


def test_embedding_layer_starts_from_title_matrix(item_matrix):
    model = LaneRecommender(item_matrix, n=5, h=2, d_k=4)
    assert np.array_equal(model.M.detach().numpy(), item_matrix)
    assert model.hparams["item_count"] == 130
    assert model.hparams["d"] == 8


def test_title_matrix_is_copied_not_shared(item_matrix):
    model = LaneRecommender(item_matrix, n=5, h=2, d_k=4)
    with torch.no_grad():
        model.M[1] += 1
    assert item_matrix[1, 0] != model.M[1, 0].item()


def test_freeze_flag(item_matrix):
    assert not LaneRecommender(item_matrix, n=5, h=2, d_k=4, freeze_M=True).M.requires_grad
    assert LaneRecommender(item_matrix, n=5, h=2, d_k=4).M.requires_grad


def test_from_config(make_config, item_matrix):
    config = make_config("encoder.dim=8", "alignment.d_k=4", "sequence.n=7", "alignment.enabled=false")
    model = LaneRecommender.from_config(config, item_matrix)
    assert model.hparams["n"] == 7
    assert not model.uses_alignment


def test_forward_shapes_with_and_without_alignment(item_matrix):
    indices = torch.tensor([[0, 0, 3, 4, 5], [1, 2, 3, 4, 5]])
    P = torch.randn(2, 3, 8)
    lane = LaneRecommender(item_matrix, n=5, h=2, d_k=4, dropout=0.0).eval()
    base = LaneRecommender(item_matrix, n=5, alignment=False, dropout=0.0).eval()
    assert lane(indices, P).shape == (2, 5, 8)
    assert base(indices).shape == (2, 5, 8)


def test_alignment_needs_preferences(item_matrix):
    with pytest.raises(ConfigurationError):
        LaneRecommender(item_matrix, n=5, h=2, d_k=4)(torch.tensor([[1, 2, 3, 4, 5]]))


def test_score_items_matches_dot_product(item_matrix):
    model = LaneRecommender(item_matrix, n=5, alignment=False)
    f = torch.randn(2, 8)
    items = torch.tensor([[1, 2, 3], [4, 5, 6]])
    scores = model.score_items(f, items)
    M = torch.as_tensor(item_matrix)
    assert torch.allclose(scores[1, 2], f[1] @ M[6])
    assert scores.shape == (2, 3)


def test_pad_rows_receive_no_gradient(item_matrix):
    model = LaneRecommender(item_matrix, n=5, h=2, d_k=4, dropout=0.0)
    features = model(torch.tensor([[0, 0, 1, 2, 3]]), torch.randn(1, 2, 8))
    model.score_items(features[:, -1, :], torch.tensor([[4, 5]])).sum().backward()
    assert torch.all(model.M.grad[0] == 0)
    assert model.M.grad[1].abs().sum() > 0


def test_preference_weights_sum_to_one(item_matrix):
    model = LaneRecommender(item_matrix, n=5, h=2, d_k=4, dropout=0.0).eval()
    with torch.no_grad():
        omega = model.preference_weights(torch.tensor([[0, 1, 2, 3, 4]]), torch.randn(1, 5, 8))
    assert omega.shape == (1, 5)
    assert torch.allclose(omega.sum(-1), torch.ones(1))


def test_preference_weights_need_alignment(item_matrix):
    with pytest.raises(ConfigurationError):
        LaneRecommender(item_matrix, n=5, alignment=False).preference_weights(torch.tensor([[1, 2, 3, 4, 5]]),
                                                                             torch.randn(1, 2, 8))


def test_preference_sets_encode_in_user_order():
    encoder = MockTextEncoder(dim=8)
    sets = {
        "a": PreferenceSet("a", ("Open-world shooters", "Co-op survival"), "manual"),
        "b": PreferenceSet("b", ("Cozy farming",), "manual"),
    }
    out = encode_preference_sets(sets, encoder)
    assert out["a"].shape == (2, 8) and out["b"].shape == (1, 8)
    assert np.allclose(out["b"][0], encoder.encode_one("Cozy farming"))


def test_relative_improvement():
    gains = relative_improvement({"HR@10": 0.5, "NDCG@10": 0.0, "note": "x"},
                                 {"HR@10": 0.6, "NDCG@10": 0.1, "note": "y"})
    assert gains["HR@10"] == pytest.approx(0.2)
    assert gains["NDCG@10"] is None
    assert "note" not in gains


def test_loss_gradients_match_finite_differences_end_to_end():
    from torch.func import functional_call

    from trainer import sequence_bce_loss

    torch.manual_seed(6)
    M = np.random.default_rng(6).normal(size=(9, 6))
    M[0] = 0
    model = LaneRecommender(M, n=3, blocks=1, heads=1, dropout=0.0, h=2, d_k=3).double().eval()
    indices = torch.tensor([[0, 1, 2], [3, 4, 5]])
    positives = torch.tensor([[0, 2, 6], [4, 5, 7]])
    negatives = torch.tensor([[0, 8, 1], [8, 1, 2]])
    P = torch.randn(2, 2, 6, dtype=torch.float64)

    def loss(W_q, positional, W_1):
        params = {"alignment.W_q": W_q, "backbone.positional.weight": positional, "alignment.W_1": W_1}
        features = functional_call(model, params, (indices, P))
        return sequence_bce_loss(model.score_items(features, positives), model.score_items(features, negatives),
                                 positives != 0)

    inputs = tuple(
        model.get_parameter(name).detach().clone().requires_grad_(True)
        for name in ("alignment.W_q", "backbone.positional.weight", "alignment.W_1")
    )
    assert torch.autograd.gradcheck(loss, inputs, eps=1e-6, atol=1e-5, rtol=1e-4)


def test_pad_positions_contribute_zero_loss_gradient():
    from trainer import sequence_bce_loss

    torch.manual_seed(7)
    M = np.random.default_rng(7).normal(size=(9, 6))
    M[0] = 0
    model = LaneRecommender(M, n=4, blocks=1, heads=1, dropout=0.0, h=2, d_k=3).double().eval()
    indices = torch.tensor([[0, 0, 1, 2], [0, 3, 4, 5]])
    positives = torch.tensor([[0, 0, 2, 6], [0, 4, 5, 7]])
    valid = positives != 0
    P = torch.randn(2, 2, 6, dtype=torch.float64)

    def gradients(pos_items, neg_items):
        model.zero_grad()
        features = model(indices, P)
        pos, neg = model.score_items(features, pos_items), model.score_items(features, neg_items)
        pos.retain_grad()
        neg.retain_grad()
        sequence_bce_loss(pos, neg, valid).backward()
        assert torch.all(pos.grad[~valid] == 0) and torch.all(neg.grad[~valid] == 0)
        return {name: p.grad.clone() for name, p in model.named_parameters() if p.grad is not None}

    padded = gradients(positives, torch.tensor([[0, 0, 8, 1], [0, 8, 1, 2]]))
    # real items scored at the pad positions must not move any parameter
    filled = gradients(torch.tensor([[3, 7, 2, 6], [8, 4, 5, 7]]), torch.tensor([[5, 6, 8, 1], [1, 8, 1, 2]]))

    assert padded.keys() == filled.keys()
    for name in padded:
        torch.testing.assert_close(filled[name], padded[name], rtol=0, atol=1e-12)
