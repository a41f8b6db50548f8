# backbone.py

"""
The black-box sequential recommender with its prediction head removed.

E = M[s] + PE (learnable positional table), then either a SASRec-style stack of
causal self-attention blocks or a GRU turns E into per-position features Q.
No candidate scores are computed here.
"""

import math
from dataclasses import dataclass
from typing import Literal, Optional

import torch
import torch.nn.functional as F
from torch import nn

from errors import ConfigurationError, NumericError

Variant = Literal["self_attention", "gated_recurrent"]


@dataclass
class SequenceFeatures:
    """Q (..., n, d) and the matching validity mask (..., n)."""

    Q: torch.Tensor
    valid_mask: torch.Tensor


def embed_with_positions(indices: torch.Tensor, item_embeddings: torch.Tensor,
                         positional_table: torch.Tensor) -> torch.Tensor:
    """E_t = M[index_t] + PE_t; pad positions get 0 + PE_t."""
    n = indices.shape[-1]
    if positional_table.shape[0] != n:
        raise ConfigurationError(
            f"sequence length {n} does not match positional table with {positional_table.shape[0]} rows"
        )
    if positional_table.shape[-1] != item_embeddings.shape[-1]:
        raise ConfigurationError(
            f"positional dim {positional_table.shape[-1]} != embedding dim {item_embeddings.shape[-1]}"
        )
    return F.embedding(indices, item_embeddings) + positional_table


def causal_attention_mask(valid_mask: torch.Tensor) -> torch.Tensor:
    """
    Boolean (..., n, n) mask, True where attention is blocked: future keys and pad keys.
    The diagonal is always open so a pad query never sees an empty row.
    """
    n = valid_mask.shape[-1]
    future = torch.triu(torch.ones(n, n, dtype=torch.bool, device=valid_mask.device), diagonal=1)
    pad_keys = ~valid_mask.unsqueeze(-2)
    eye = torch.eye(n, dtype=torch.bool, device=valid_mask.device)
    return (future | pad_keys) & ~eye


class CausalSelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        if d % heads:
            raise ConfigurationError(f"d={d} is not divisible by heads={heads}")
        self.d = d
        self.heads = heads
        self.head_size = d // heads
        self.q_w = nn.Linear(d, d)
        self.k_w = nn.Linear(d, d)
        self.v_w = nn.Linear(d, d)
        self.out_w = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)
        for layer in (self.q_w, self.k_w, self.v_w, self.out_w):
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, n, _ = x.shape
        return x.view(*lead, n, self.heads, self.head_size).transpose(-3, -2)

    def forward(self, queries: torch.Tensor, keys: torch.Tensor, blocked: torch.Tensor) -> torch.Tensor:
        q, k, v = self._split(self.q_w(queries)), self._split(self.k_w(keys)), self._split(self.v_w(keys))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_size)
        scores = scores.masked_fill(blocked.unsqueeze(-3), float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(-3, -2).contiguous()
        return self.out_w(out.view(*out.shape[:-2], self.d))


class PointWiseFeedForward(nn.Module):
    def __init__(self, d: int, dropout: float):
        super().__init__()
        self.linear1 = nn.Linear(d, d)
        self.linear2 = nn.Linear(d, d)
        self.dropout1 = nn.Dropout(dropout)
        self.dropout2 = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.dropout2(self.linear2(self.dropout1(torch.relu(self.linear1(x)))))
        return out + x


class SequenceBackbone(nn.Module):
    """Common parent: owns the positional table and turns (indices, M) into Q."""

    variant: Variant

    def __init__(self, n: int, d: int, dropout: float):
        super().__init__()
        self.n = n
        self.d = d
        self.positional = nn.Embedding(n, d)
        self.input_dropout = nn.Dropout(dropout)

    @property
    def positional_table(self) -> torch.Tensor:
        return self.positional.weight

    def encode(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, indices: torch.Tensor, item_embeddings: torch.Tensor) -> SequenceFeatures:
        valid_mask = indices != 0
        E = embed_with_positions(indices, item_embeddings, self.positional_table)
        return encode_sequence(E, self, valid_mask)


class SelfAttentionBackbone(SequenceBackbone):
    variant = "self_attention"

    def __init__(self, n: int, d: int, blocks: int = 2, heads: int = 1, dropout: float = 0.5):
        super().__init__(n, d, dropout)
        self.attention_layernorms = nn.ModuleList([nn.LayerNorm(d, eps=1e-8) for _ in range(blocks)])
        self.attention_layers = nn.ModuleList([CausalSelfAttention(d, heads, dropout) for _ in range(blocks)])
        self.forward_layernorms = nn.ModuleList([nn.LayerNorm(d, eps=1e-8) for _ in range(blocks)])
        self.forward_layers = nn.ModuleList([PointWiseFeedForward(d, dropout) for _ in range(blocks)])
        self.last_layernorm = nn.LayerNorm(d, eps=1e-8)

    def encode(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        blocked = causal_attention_mask(valid_mask)
        keep = valid_mask.unsqueeze(-1).to(E.dtype)
        seqs = self.input_dropout(E)
        for layer, (attn_norm, attn, ffn_norm, ffn) in enumerate(zip(
                self.attention_layernorms, self.attention_layers, self.forward_layernorms, self.forward_layers)):
            queries = attn_norm(seqs)
            seqs = queries + attn(queries, seqs, blocked)
            seqs = ffn(ffn_norm(seqs)) * keep
            _check_finite(seqs, layer)
        return self.last_layernorm(seqs)


class GatedRecurrentBackbone(SequenceBackbone):
    variant = "gated_recurrent"

    def __init__(self, n: int, d: int, dropout: float = 0.5, layers: int = 1):
        super().__init__(n, d, dropout)
        self.gru = nn.GRU(d, d, num_layers=layers, batch_first=True)
        self.output_dropout = nn.Dropout(dropout)

    def encode(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        squeeze = E.dim() == 2
        seqs = self.input_dropout(E.unsqueeze(0) if squeeze else E)
        out, _ = self.gru(seqs)
        _check_finite(out, 0)
        out = self.output_dropout(out)
        return out.squeeze(0) if squeeze else out


def _check_finite(x: torch.Tensor, layer: int) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(layer)


def encode_sequence(E: torch.Tensor, backbone: SequenceBackbone,
                    valid_mask: Optional[torch.Tensor] = None) -> SequenceFeatures:
    """Per-position features Q for E; q_t only depends on positions <= t."""
    if not torch.isfinite(E).all():
        raise NumericError(-1, "inputs")
    if valid_mask is None:
        valid_mask = torch.ones(E.shape[:-1], dtype=torch.bool, device=E.device)
    return SequenceFeatures(Q=backbone.encode(E, valid_mask), valid_mask=valid_mask)


def build_backbone(variant: Variant, n: int, d: int, blocks: int = 2, heads: int = 1,
                   dropout: float = 0.5) -> SequenceBackbone:
    if variant == "self_attention":
        return SelfAttentionBackbone(n, d, blocks=blocks, heads=heads, dropout=dropout)
    if variant == "gated_recurrent":
        return GatedRecurrentBackbone(n, d, dropout=dropout)
    raise ConfigurationError(f"unknown backbone variant {variant!r}")
