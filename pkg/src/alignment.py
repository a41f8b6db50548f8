# alignment.py

"""
Preference alignment block: multi-head cross-attention from sequence features Q
to preference embeddings P, a position-wise FFN and two LayerNorms.

    att = LayerNorm(Multihead(Q, P, P)) + Q
    F   = LayerNorm(FFN(att)) + att

The residual is added after the LayerNorm, not inside it. The same query/key
projections give the preference weights omega of the last position, computed
as a single softmax over the concatenated heads with scale sqrt(h * d_k).

All functions accept leading batch dimensions.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import torch
from torch import nn

from errors import ConfigurationError

Dropout = Optional[Callable[[torch.Tensor], torch.Tensor]]


@dataclass
class AlignedFeatures:
    F: torch.Tensor
    att: torch.Tensor


# ==============================
# Functional building blocks
# ==============================

def scaled_dot_product_attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor,
                                 dropout: Dropout = None) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V, row-wise softmax."""
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ConfigurationError(f"attention shapes do not agree: Q{tuple(Q.shape)} K{tuple(K.shape)} V{tuple(V.shape)}")
    weights = torch.softmax(Q @ K.transpose(-1, -2) / math.sqrt(Q.shape[-1]), dim=-1)
    if dropout is not None:
        weights = dropout(weights)
    return weights @ V


def _project_heads(x: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
    # (..., rows, d) x (h, d, d_k) -> (..., h, rows, d_k)
    return torch.einsum("...rd,hdk->...hrk", x, W)


def multi_head_attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor,
                         W_q: torch.Tensor, W_k: torch.Tensor, W_v: torch.Tensor, W_o: torch.Tensor,
                         dropout: Dropout = None) -> torch.Tensor:
    """Concat(head_1..head_h) W_o with head_i = Attention(Q W_i^Q, K W_i^K, V W_i^V)."""
    h, d, d_k = W_q.shape
    if Q.shape[-1] != d or K.shape[-1] != d or V.shape[-1] != d:
        raise ConfigurationError(f"inputs of width {Q.shape[-1]}/{K.shape[-1]}/{V.shape[-1]} do not match projections of width {d}")
    if W_k.shape != W_q.shape or W_v.shape[:2] != (h, d) or W_o.shape[0] != h * W_v.shape[-1]:
        raise ConfigurationError("projection matrices have inconsistent shapes")
    heads = scaled_dot_product_attention(
        _project_heads(Q, W_q), _project_heads(K, W_k), _project_heads(V, W_v), dropout=dropout
    )
    # (..., h, n, d_v) -> (..., n, h * d_v), head-major
    concat = heads.transpose(-3, -2).reshape(*heads.shape[:-3], heads.shape[-2], -1)
    return concat @ W_o


def position_wise_ffn(x: torch.Tensor, W_1: torch.Tensor, b_1: torch.Tensor, W_2: torch.Tensor,
                      b_2: torch.Tensor, dropout: Dropout = None) -> torch.Tensor:
    hidden = torch.relu(x @ W_1 + b_1)
    if dropout is not None:
        hidden = dropout(hidden)
    return hidden @ W_2 + b_2


def layer_normalize(x: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor, eps: float) -> torch.Tensor:
    """alpha * (x - mean) / sqrt(var + eps) + beta over the last axis, population variance."""
    if eps <= 0:
        raise ConfigurationError(f"layer norm epsilon must be positive, got {eps}")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return alpha * (x - mean) / torch.sqrt(var + eps) + beta


# ==============================
# Module
# ==============================

class PreferenceAlignment(nn.Module):
    def __init__(self, d: int, h: int = 4, d_k: int = 384, dropout: float = 0.0, eps: float = 1e-8):
        super().__init__()
        self.d, self.h, self.d_k, self.eps = d, h, d_k, eps
        self.W_q = nn.Parameter(torch.empty(h, d, d_k))
        self.W_k = nn.Parameter(torch.empty(h, d, d_k))
        self.W_v = nn.Parameter(torch.empty(h, d, d_k))
        self.W_o = nn.Parameter(torch.empty(h * d_k, d))
        self.W_1 = nn.Parameter(torch.empty(d, d))
        self.b_1 = nn.Parameter(torch.zeros(d))
        self.W_2 = nn.Parameter(torch.empty(d, d))
        self.b_2 = nn.Parameter(torch.zeros(d))
        self.alpha_1 = nn.Parameter(torch.ones(d))
        self.beta_1 = nn.Parameter(torch.zeros(d))
        self.alpha_2 = nn.Parameter(torch.ones(d))
        self.beta_2 = nn.Parameter(torch.zeros(d))
        self.attention_dropout = nn.Dropout(dropout)
        self.ffn_dropout = nn.Dropout(dropout)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        with torch.no_grad():
            for W in (self.W_q, self.W_k, self.W_v):
                for head in range(self.h):
                    nn.init.xavier_uniform_(W[head])
            for W in (self.W_o, self.W_1, self.W_2):
                nn.init.xavier_uniform_(W)

    def multihead(self, Q: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
        return multi_head_attention(Q, P, P, self.W_q, self.W_k, self.W_v, self.W_o,
                                    dropout=self.attention_dropout)

    def forward(self, Q: torch.Tensor, P: torch.Tensor) -> AlignedFeatures:
        return align(Q, P, self)

    def preference_weights(self, q_n: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
        return preference_attention_weights(q_n, P, self)


def align(Q: torch.Tensor, P: torch.Tensor, params: PreferenceAlignment) -> AlignedFeatures:
    if Q.shape[-1] != P.shape[-1]:
        raise ConfigurationError(f"sequence width {Q.shape[-1]} != preference width {P.shape[-1]}")
    att = layer_normalize(params.multihead(Q, P), params.alpha_1, params.beta_1, params.eps) + Q
    ffn = position_wise_ffn(att, params.W_1, params.b_1, params.W_2, params.b_2, dropout=params.ffn_dropout)
    F = layer_normalize(ffn, params.alpha_2, params.beta_2, params.eps) + att
    return AlignedFeatures(F=F, att=att)


def preference_attention_weights(q_n: torch.Tensor, P: torch.Tensor, params: PreferenceAlignment) -> torch.Tensor:
    """
    omega = softmax(Q_n K^T / sqrt(h * d_k)) where Q_n (1 x h*d_k) and K (m x h*d_k)
    concatenate the per-head projections. One softmax over all heads, no averaging.
    """
    h, _, d_k = params.W_q.shape
    Q_n = torch.einsum("...d,hdk->...hk", q_n, params.W_q).reshape(*q_n.shape[:-1], h * d_k)
    K = torch.einsum("...md,hdk->...mhk", P, params.W_k).reshape(*P.shape[:-1], h * d_k)
    logits = torch.einsum("...c,...mc->...m", Q_n, K) / math.sqrt(h * d_k)
    return torch.softmax(logits, dim=-1)
