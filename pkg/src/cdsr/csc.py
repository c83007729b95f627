"""Codebook-based space compression: soft attention over a learnable codebook."""
from __future__ import annotations

import math

import torch
import torch.nn as nn


def mlp2(cin, hidden, cout):
    return nn.Sequential(nn.Linear(cin, hidden), nn.LeakyReLU(0.1, inplace=True), nn.Linear(hidden, cout))


def compress(query: torch.Tensor, codebook: torch.Tensor, key_mlp=None, logit_shift: float = 0.0):
    """Return ``(e_a, weights)`` with ``e_a = softmax(query @ K^T) @ codebook``.

    ``query`` is (N, C), already passed through the query MLP; ``K`` is the
    codebook mapped row-wise by ``key_mlp`` (identity when None). There is no
    temperature on the softmax.
    """
    if query.shape[-1] != codebook.shape[-1]:
        raise ValueError(f"query width {query.shape[-1]} != codebook width {codebook.shape[-1]}")
    keys = codebook if key_mlp is None else key_mlp(codebook)
    logits = query @ keys.transpose(0, 1) + logit_shift
    w = torch.softmax(logits, dim=-1)
    return w @ codebook, w


class CodebookCompression(nn.Module):
    def __init__(self, in_dim: int, embed_dim: int = 256, codebook_length: int = 1024):
        super().__init__()
        self.in_dim = in_dim
        self.embed_dim = embed_dim
        self.query_mlp = mlp2(in_dim, embed_dim, embed_dim)
        self.key_mlp = mlp2(embed_dim, embed_dim, embed_dim)
        self.codebook = nn.Parameter(torch.randn(codebook_length, embed_dim) / math.sqrt(embed_dim))
        self.logit_shift = 0.0

    def forward(self, feat):
        if feat.shape[-1] != self.in_dim:
            raise ValueError(f"expected features of width {self.in_dim}, got {feat.shape[-1]}")
        e_a, _ = compress(self.query_mlp(feat), self.codebook, self.key_mlp, self.logit_shift)
        return e_a

    def compress(self, e_p, e_l):
        return self.forward(torch.cat([e_p, e_l], dim=-1))

    def attention_weights(self, feat):
        return compress(self.query_mlp(feat), self.codebook, self.key_mlp, self.logit_shift)[1]


class DirectEmbedding(nn.Module):
    """Ablation without the codebook: ``E_a = MLP(Cat(E_p, E_l))``."""

    def __init__(self, in_dim: int, embed_dim: int = 256):
        super().__init__()
        self.in_dim = in_dim
        self.query_mlp = mlp2(in_dim, embed_dim, embed_dim)

    def forward(self, feat):
        if feat.shape[-1] != self.in_dim:
            raise ValueError(f"expected features of width {self.in_dim}, got {feat.shape[-1]}")
        return self.query_mlp(feat)
