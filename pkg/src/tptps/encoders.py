"""Tiny dual transformer encoders with generalized-mean token pooling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import EOT, PAD, SOT, Tokenizer

GEM_EPS = 1e-6


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    visual_layers: int = 4
    text_layers: int = 4
    heads: int = 4
    patch_count: int = 48
    patch_dim: int = 32
    max_len: int = 32
    frozen_text_layers: int = 2
    gem_q: float = 3.0
    gem_learnable: bool = False
    mlp_ratio: int = 4

    def validate(self):
        if not 0 <= self.frozen_text_layers < self.text_layers:
            raise ValueError("frozen_text_layers must be in [0, text_layers)")
        if self.gem_q <= 1:
            raise ValueError("gem_q must be > 1")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")


@dataclass
class EmbeddingOutputs:
    global_feat: torch.Tensor  # (..., d)
    pooled: torch.Tensor  # (..., d)
    tokens: torch.Tensor  # (..., n, d)

    @property
    def concat(self) -> torch.Tensor:
        return torch.cat([self.global_feat, self.pooled], dim=-1)


def gem_pool(tokens: torch.Tensor, q, mask: torch.Tensor | None = None, eps: float = GEM_EPS) -> torch.Tensor:
    """Generalized mean over the token axis (-2).

    Inputs are clamped to ``eps`` first since real powers of negative
    activations are undefined. ``mask`` selects the tokens that count.
    """
    if tokens.shape[-2] == 0:
        raise ValueError("gem_pool needs at least one token")
    if not torch.is_tensor(q) and q < 1:
        raise ValueError("gem_pool needs q >= 1")
    x = tokens.clamp(min=eps).pow(q)
    if mask is None:
        mean = x.mean(dim=-2)
    else:
        m = mask.to(x.dtype).unsqueeze(-1)
        mean = (x * m).sum(dim=-2) / m.sum(dim=-2)
    return mean.pow(1.0 / q)


class Block(nn.Module):
    def __init__(self, d: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.heads = heads
        self.ln_1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.ln_2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, mlp_ratio * d), nn.GELU(), nn.Linear(mlp_ratio * d, d))

    def attention(self, x, bias):
        B, T, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        q, k, v = (t.view(B, T, self.heads, D // self.heads).transpose(1, 2) for t in (q, k, v))
        att = q @ k.transpose(-2, -1) / math.sqrt(D // self.heads)
        if bias is not None:
            att = att + bias
        y = att.softmax(dim=-1) @ v
        return self.out(y.transpose(1, 2).reshape(B, T, D))

    def forward(self, x, bias=None):
        x = x + self.attention(self.ln_1(x), bias)
        return x + self.mlp(self.ln_2(x))


class _GeM(nn.Module):
    def __init__(self, q: float, learnable: bool):
        super().__init__()
        self.q = nn.Parameter(torch.tensor(float(q)), requires_grad=learnable)

    def forward(self, tokens, mask=None):
        q = self.q if self.q.requires_grad else float(self.q)
        return gem_pool(tokens, q, mask)


class VisualEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_dim, d)
        self.class_token = nn.Parameter(0.02 * torch.randn(d))
        self.pos_embed = nn.Parameter(0.01 * torch.randn(cfg.patch_count + 1, d))
        self.ln_pre = nn.LayerNorm(d)
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.visual_layers))
        self.ln_post = nn.LayerNorm(d)
        self.proj = nn.Linear(d, d, bias=False)
        self.gem = _GeM(cfg.gem_q, cfg.gem_learnable)

    def forward(self, grids: torch.Tensor) -> EmbeddingOutputs:
        if grids.shape[-2:] != (self.cfg.patch_count, self.cfg.patch_dim):
            raise ValueError(
                f"expected grids of shape (..., {self.cfg.patch_count}, {self.cfg.patch_dim}), got {tuple(grids.shape)}"
            )
        x = self.patch_embed(grids)
        cls = self.class_token.expand(x.shape[0], 1, -1)
        x = self.ln_pre(torch.cat([cls, x], dim=1) + self.pos_embed)
        for blk in self.blocks:
            x = blk(x)
        x = self.proj(self.ln_post(x))
        return EmbeddingOutputs(x[:, 0], self.gem(x[:, 1:]), x)


class TextEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        d = cfg.embed_dim
        self.cfg = cfg
        self.token_embedding = nn.Embedding(vocab_size, d)
        self.pos_embed = nn.Parameter(0.01 * torch.randn(cfg.max_len, d))
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.text_layers))
        self.ln_final = nn.LayerNorm(d)
        self.proj = nn.Linear(d, d, bias=False)
        self.gem = _GeM(cfg.gem_q, cfg.gem_learnable)

    def forward(self, ids: torch.Tensor) -> EmbeddingOutputs:
        T = ids.shape[1]
        x = self.token_embedding(ids) + self.pos_embed[:T]
        causal = torch.full((T, T), float("-inf"), dtype=x.dtype).triu(1)
        pad = torch.zeros(ids.shape, dtype=x.dtype).masked_fill(ids == PAD, float("-inf"))
        bias = causal[None, None] + pad[:, None, None, :]
        for blk in self.blocks:
            x = blk(x, bias)
        x = self.proj(self.ln_final(x))
        eot = (ids == EOT).int().argmax(dim=1)
        words = (ids != PAD) & (ids != SOT) & (ids != EOT)
        return EmbeddingOutputs(x[torch.arange(len(ids)), eot], self.gem(x, words), x)


class DualEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, tokenizer: Tokenizer):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.visual = VisualEncoder(cfg)
        self.text = TextEncoder(cfg, len(tokenizer))
        set_frozen_layers(self, cfg.frozen_text_layers)

    @property
    def dtype(self):
        return self.visual.pos_embed.dtype

    def encode_image(self, grid) -> EmbeddingOutputs:
        """Encode one grid or a batch of grids (ImageSpec, array or tensor)."""
        if hasattr(grid, "patch_grid"):
            grid = grid.patch_grid
        x = torch.as_tensor(np.asarray(grid) if not torch.is_tensor(grid) else grid, dtype=self.dtype)
        single = x.dim() == 2
        out = self.visual(x[None] if single else x)
        if single:
            return EmbeddingOutputs(out.global_feat[0], out.pooled[0], out.tokens[0])
        return out

    def encode_text(self, text) -> EmbeddingOutputs:
        """Encode a string or a list of strings."""
        single = isinstance(text, str)
        ids = self.tokenizer.encode_batch([text] if single else list(text))
        out = self.text(ids)
        if single:
            return EmbeddingOutputs(out.global_feat[0], out.pooled[0], out.tokens[0])
        return out

    def text_parameters(self):
        return self.text.parameters()


def set_frozen_layers(model: DualEncoder, n_frozen: int) -> DualEncoder:
    """Freeze the bottom ``n_frozen`` text blocks; embeddings go with them."""
    n_layers = len(model.text.blocks)
    if not 0 <= n_frozen < n_layers:
        raise ValueError(f"n_frozen must be in [0, {n_layers}), got {n_frozen}")
    for i, blk in enumerate(model.text.blocks):
        for prm in blk.parameters():
            prm.requires_grad_(i >= n_frozen)
    model.text.token_embedding.weight.requires_grad_(n_frozen == 0)
    model.text.pos_embed.requires_grad_(n_frozen == 0)
    model.cfg.frozen_text_layers = n_frozen
    return model
