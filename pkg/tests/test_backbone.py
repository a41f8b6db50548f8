# tests/test_backbone.py
import pytest
import torch

from backbone import (
    GatedRecurrentBackbone,
    SelfAttentionBackbone,
    build_backbone,
    causal_attention_mask,
    embed_with_positions,
    encode_sequence,
)
from errors import ConfigurationError, NumericError


def _item_table(count=6, d=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    M = torch.randn(count + 1, d, generator=gen)
    M[0] = 0
    return M


def test_embedding_adds_positions_and_pads_to_zero_plus_position():
    M = _item_table()
    PE = torch.arange(12, dtype=torch.float32).view(3, 4)
    E = embed_with_positions(torch.tensor([0, 2, 5]), M, PE)
    assert torch.equal(E[0], PE[0])
    assert torch.equal(E[1], M[2] + PE[1])
    assert torch.equal(E[2], M[5] + PE[2])


def test_embedding_rejects_length_and_dim_mismatch():
    M = _item_table(d=4)
    with pytest.raises(ConfigurationError):
        embed_with_positions(torch.tensor([1, 2]), M, torch.zeros(3, 4))
    with pytest.raises(ConfigurationError):
        embed_with_positions(torch.tensor([1, 2, 3]), M, torch.zeros(3, 5))


def test_mask_blocks_future_and_pad_keys_but_never_the_diagonal():
    blocked = causal_attention_mask(torch.tensor([False, True, True]))
    expected = torch.tensor([
        [False, True, True],
        [True, False, True],
        [True, False, False],
    ])
    assert torch.equal(blocked, expected)


@pytest.mark.parametrize("variant", ["self_attention", "gated_recurrent"])
def test_output_shape(variant):
    backbone = build_backbone(variant, n=5, d=4, blocks=2, heads=2, dropout=0.0).eval()
    indices = torch.tensor([[0, 0, 1, 2, 3], [1, 2, 3, 4, 5]])
    features = backbone(indices, _item_table())
    assert features.Q.shape == (2, 5, 4)
    assert features.valid_mask.tolist()[0] == [False, False, True, True, True]


@pytest.mark.parametrize("variant", ["self_attention", "gated_recurrent"])
def test_features_do_not_see_the_future(variant):
    torch.manual_seed(0)
    backbone = build_backbone(variant, n=5, d=4, heads=1, dropout=0.0).eval()
    M = _item_table()
    with torch.no_grad():
        a = backbone(torch.tensor([1, 2, 3, 4, 5]), M).Q
        b = backbone(torch.tensor([1, 2, 3, 6, 1]), M).Q
    assert torch.allclose(a[:3], b[:3], atol=1e-6)
    assert not torch.allclose(a[3:], b[3:])


def test_first_position_attends_only_to_itself():
    torch.manual_seed(1)
    backbone = SelfAttentionBackbone(n=3, d=4, blocks=1, heads=1, dropout=0.0).eval()
    E = torch.randn(3, 4)
    with torch.no_grad():
        Q = encode_sequence(E, backbone).Q
        attn = backbone.attention_layers[0]
        q = backbone.attention_layernorms[0](E[0])
        seqs = q + attn.out_w(attn.v_w(E[0]))
        x = backbone.forward_layernorms[0](seqs)
        ffn = backbone.forward_layers[0]
        expected = backbone.last_layernorm(ffn.linear2(torch.relu(ffn.linear1(x))) + x)
    assert torch.allclose(Q[0], expected, atol=1e-5)


def test_pad_rows_are_zero_before_final_norm():
    backbone = SelfAttentionBackbone(n=4, d=4, blocks=1, heads=1, dropout=0.0).eval()
    with torch.no_grad():
        Q = backbone(torch.tensor([0, 0, 1, 2]), _item_table()).Q
    # LayerNorm of a zero row is its bias, which starts at zero
    assert torch.allclose(Q[:2], torch.zeros(2, 4))


def test_non_finite_input_is_rejected():
    backbone = SelfAttentionBackbone(n=2, d=4, blocks=1)
    E = torch.tensor([[0.0, 1.0, float("nan"), 0.0], [1.0, 1.0, 1.0, 1.0]])
    with pytest.raises(NumericError):
        encode_sequence(E, backbone)


def test_heads_must_divide_dim():
    with pytest.raises(ConfigurationError):
        SelfAttentionBackbone(n=3, d=5, heads=2)


def test_unknown_variant():
    with pytest.raises(ConfigurationError):
        build_backbone("transformer_xl", n=3, d=4)


def test_gru_accepts_unbatched_input():
    backbone = GatedRecurrentBackbone(n=3, d=4, dropout=0.0)
    assert encode_sequence(torch.randn(3, 4), backbone).Q.shape == (3, 4)


@pytest.mark.parametrize("variant", ["self_attention", "gated_recurrent"])
def test_gradients_match_finite_differences(variant):
    torch.manual_seed(2)
    backbone = build_backbone(variant, n=3, d=4, blocks=1, heads=2, dropout=0.0).double().eval()
    E = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: encode_sequence(x, backbone).Q, (E,), eps=1e-6, atol=1e-4)
