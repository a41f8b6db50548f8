# recommender.py

"""
LANE model: embedding layer initialized from the title matrix M, the sequence
backbone, and (optionally) the preference alignment block.

With alignment disabled the model is the plain backbone baseline (F = Q), which
is what the "with vs without alignment" comparison trains.
"""

from typing import Dict, Mapping, Optional

import numpy as np
import torch
from torch import nn

from alignment import PreferenceAlignment
from backbone import build_backbone
from errors import ConfigurationError
from logger import logger
from preference_llm import PreferenceSet
from text_encoder import EmbeddingCache, TextEncoder, encode_texts


class LaneRecommender(nn.Module):
    def __init__(self, M: np.ndarray, n: int, variant: str = "self_attention", blocks: int = 2,
                 heads: int = 1, dropout: float = 0.5, alignment: bool = True, h: int = 4,
                 d_k: int = 384, alignment_dropout: Optional[float] = None, eps: float = 1e-8,
                 freeze_M: bool = False):
        super().__init__()
        M = torch.as_tensor(np.asarray(M), dtype=torch.float32)
        if M.dim() != 2 or M.shape[0] < 2:
            raise ConfigurationError(f"embedding matrix must be (|I|+1) x d, got {tuple(M.shape)}")
        d = int(M.shape[1])
        self.hparams = {
            "n": n, "variant": variant, "blocks": blocks, "heads": heads, "dropout": dropout,
            "alignment": alignment, "h": h, "d_k": d_k,
            "alignment_dropout": dropout if alignment_dropout is None else alignment_dropout,
            "eps": eps, "freeze_M": freeze_M, "item_count": int(M.shape[0]) - 1, "d": d,
        }
        self.item_embeddings = nn.Embedding.from_pretrained(M.clone(), freeze=freeze_M, padding_idx=0)
        self.backbone = build_backbone(variant, n, d, blocks=blocks, heads=heads, dropout=dropout)
        self.alignment = (
            PreferenceAlignment(d, h=h, d_k=d_k, dropout=self.hparams["alignment_dropout"], eps=eps)
            if alignment else None
        )

    @classmethod
    def from_config(cls, config, M: np.ndarray) -> "LaneRecommender":
        return cls(
            M,
            n=config.sequence.n,
            variant=config.backbone.variant,
            blocks=config.backbone.blocks,
            heads=config.backbone.heads,
            dropout=config.backbone.dropout,
            alignment=config.alignment.enabled,
            h=config.alignment.h,
            d_k=config.alignment.d_k,
            alignment_dropout=config.alignment_dropout,
            eps=config.alignment.layer_norm_eps,
            freeze_M=config.trainer.freeze_M,
        )

    @property
    def uses_alignment(self) -> bool:
        return self.alignment is not None

    @property
    def M(self) -> torch.Tensor:
        return self.item_embeddings.weight

    def forward(self, indices: torch.Tensor, P: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Per-position features F (B, n, d) for left-padded item indices (B, n)."""
        Q = self.backbone(indices, self.M).Q
        if self.alignment is None:
            return Q
        if P is None:
            raise ConfigurationError("alignment is enabled but no preference embeddings were given")
        return self.alignment(Q, P).F

    def score_items(self, features: torch.Tensor, items: torch.Tensor) -> torch.Tensor:
        """r = f . M[item]; ``features`` (..., d) against ``items`` (..., c) or matching positions."""
        candidates = self.item_embeddings(items)
        if candidates.dim() == features.dim():
            return (features * candidates).sum(-1)
        return torch.einsum("...d,...cd->...c", features, candidates)

    def preference_weights(self, indices: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
        """omega from the last position's q (the most recent item under left padding)."""
        if self.alignment is None:
            raise ConfigurationError("preference weights need the alignment block (alignment.enabled = true)")
        q_n = self.backbone(indices, self.M).Q[..., -1, :]
        return self.alignment.preference_weights(q_n, P)


def encode_preference_sets(preference_sets: Mapping[str, PreferenceSet], encoder: TextEncoder,
                           cache: Optional[EmbeddingCache] = None) -> Dict[str, np.ndarray]:
    """P^u (m x d) for every user, encoded with the same frozen encoder as the titles."""
    users = list(preference_sets)
    if not users:
        return {}
    texts = [text for u in users for text in preference_sets[u].preferences]
    vectors = encode_texts(texts, encoder, cache)
    out: Dict[str, np.ndarray] = {}
    row = 0
    for user_id in users:
        m = preference_sets[user_id].m
        out[user_id] = vectors[row:row + m]
        row += m
    logger.info(f"✅ Encoded preferences of {len(out)} user(s)")
    return out


def relative_improvement(base: Mapping[str, float], lane: Mapping[str, float]) -> Dict[str, Optional[float]]:
    """(lane - base) / base per shared metric; None where the base is zero or missing."""
    out: Dict[str, Optional[float]] = {}
    for key, value in lane.items():
        reference = base.get(key)
        if not isinstance(value, (int, float)) or not isinstance(reference, (int, float)) or isinstance(value, bool):
            continue
        out[key] = None if reference == 0 else (value - reference) / reference
    return out
