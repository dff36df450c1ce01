"""Trainable blocks: positional gating (RICA), token preparation, and
self-/cross-attention transformer encoders.

All blocks take batched (B, T, E) tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .nn import Dropout, LayerNorm, Linear, Module, trunc_normal
from .tensor import DEFAULT_DTYPE, Parameter, Tensor, concat, softmax


@dataclass
class EncoderConfig:
    embed_dim: int
    layers: int
    heads: int
    ffn_multiplier: int = 4
    dropout: float = 0.0
    mode: str = "self"

    def __post_init__(self):
        if self.mode not in ("self", "cross"):
            raise ValueError(f"mode must be 'self' or 'cross', got {self.mode!r}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")


class RicaBlock(Module):
    """Dual-axis positional gating over the (depth x embedding) feature map.

    depth gate: mean over E -> 1-D conv over depth (kernel 3, zero padded) -> sigmoid
    embed gate: mean over depth -> E -> E/r -> ReLU -> E -> sigmoid
    y = x + alpha_d * (g_depth * x) + alpha_e * (g_embed * x)

    Both alphas start at zero, so a fresh block is the identity.
    """

    def __init__(self, embed_dim: int, rng: np.random.Generator, ratio: int = 4):
        hidden = max(1, embed_dim // ratio)
        self.conv_weight = Parameter(trunc_normal(rng, (3,)))
        self.conv_bias = Parameter(np.zeros(1, dtype=DEFAULT_DTYPE))
        self.fc1 = Linear(embed_dim, hidden, rng)
        self.fc2 = Linear(hidden, embed_dim, rng)
        self.alpha_depth = Parameter(np.zeros(1, dtype=DEFAULT_DTYPE))
        self.alpha_embed = Parameter(np.zeros(1, dtype=DEFAULT_DTYPE))

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, d, _ = x.shape
        pooled = x.mean(axis=2)  # (B, D)
        pad = Tensor(np.zeros((b, 1), dtype=x.dtype))
        padded = concat([pad, pooled, pad], axis=1)  # (B, D + 2)
        w = self.conv_weight
        conv = (
            padded[:, 0:d] * w[0:1]
            + padded[:, 1 : d + 1] * w[1:2]
            + padded[:, 2 : d + 2] * w[2:3]
            + self.conv_bias
        )
        g_depth = conv.sigmoid().reshape(b, d, 1)
        squeezed = x.mean(axis=1)  # (B, E)
        g_embed = self.fc2(self.fc1(squeezed).relu()).sigmoid().reshape(b, 1, -1)
        return g_depth, g_embed

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise DimensionError(f"RICA expects (B, D, E), got {x.shape}")
        g_depth, g_embed = self.gates(x)
        return x + self.alpha_depth * (g_depth * x) + self.alpha_embed * (g_embed * x)


class TokenPrep(Module):
    """Prepend a learnable CLS token and add learnable positional embeddings (CLS included)."""

    def __init__(self, embed_dim: int, length: int, rng: np.random.Generator):
        self.embed_dim = embed_dim
        self.length = length
        self.cls = Parameter(trunc_normal(rng, (1, embed_dim)))
        self.pos = Parameter(trunc_normal(rng, (length + 1, embed_dim)))

    def forward(self, seq: Tensor) -> Tensor:
        if seq.ndim != 3 or seq.shape[2] != self.embed_dim:
            raise DimensionError(f"expected (B, {self.length}, {self.embed_dim}) features, got {seq.shape}")
        if seq.shape[1] != self.length:
            raise DimensionError(f"expected {self.length} slices, got {seq.shape[1]}")
        b = seq.shape[0]
        cls = self.cls.reshape(1, 1, self.embed_dim) + Tensor(np.zeros((b, 1, self.embed_dim), dtype=seq.dtype))
        return concat([cls, seq], axis=1) + self.pos


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate q/k/v/out projections.

    The most recent attention probabilities are kept in ``last_probs`` as a
    (B, H, Tq, Tk) array for inspection.
    """

    def __init__(self, embed_dim: int, heads: int, rng: np.random.Generator):
        if embed_dim % heads:
            raise ValueError(f"embed_dim {embed_dim} is not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.q = Linear(embed_dim, embed_dim, rng)
        self.k = Linear(embed_dim, embed_dim, rng)
        self.v = Linear(embed_dim, embed_dim, rng)
        self.out = Linear(embed_dim, embed_dim, rng)
        self.last_probs: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.head_dim).permute(0, 2, 1, 3)

    def forward(self, xq: Tensor, xkv: Tensor) -> Tensor:
        if xq.shape[-1] != xkv.shape[-1]:
            raise DimensionError(f"query width {xq.shape[-1]} != key/value width {xkv.shape[-1]}")
        b, tq, e = xq.shape
        q = self._split(self.q(xq))
        k = self._split(self.k(xkv))
        v = self._split(self.v(xkv))
        scores = (q @ k.permute(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        probs = softmax(scores, axis=-1)
        self.last_probs = probs.data
        ctx = (probs @ v).permute(0, 2, 1, 3).reshape(b, tq, e)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, embed_dim: int, multiplier: int, rng: np.random.Generator, dropout: float = 0.0, seed: int = 0):
        self.fc1 = Linear(embed_dim, embed_dim * multiplier, rng)
        self.fc2 = Linear(embed_dim * multiplier, embed_dim, rng)
        self.drop = Dropout(dropout, seed)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop(self.fc2(self.fc1(x).gelu()))


class SelfAttentionLayer(Module):
    """Pre-norm layer: t' = t + MHSA(LN(t)); out = t' + FFN(LN(t'))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        seed = int(rng.integers(2**31))
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, rng)
        self.drop = Dropout(cfg.dropout, seed)
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.ffn_multiplier, rng, cfg.dropout, seed + 1)

    def forward(self, t: Tensor) -> Tensor:
        h = self.norm1(t)
        t = t + self.drop(self.attn(h, h))
        return t + self.ffn(self.norm2(t))


class CrossAttentionLayer(Module):
    """Queries from ``q``, keys/values from ``kv``.

    There is no residual around the cross-attention: t' = MHCA(LN(q), LN(kv)).
    The feed-forward residual is kept: out = t' + FFN(LN(t')).
    ``residual=True`` adds q back after attention and exists only as a
    structural contrast for tests and ablations.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, residual: bool = False):
        seed = int(rng.integers(2**31))
        self.norm_q = LayerNorm(cfg.embed_dim)
        self.norm_kv = LayerNorm(cfg.embed_dim)
        self.attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, rng)
        self.drop = Dropout(cfg.dropout, seed)
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.ffn_multiplier, rng, cfg.dropout, seed + 1)
        self.residual = residual

    def attend(self, q: Tensor, kv: Tensor) -> Tensor:
        if q.shape[-1] != kv.shape[-1]:
            raise DimensionError(f"query width {q.shape[-1]} != key/value width {kv.shape[-1]}")
        a = self.drop(self.attn(self.norm_q(q), self.norm_kv(kv)))
        return q + a if self.residual else a

    def forward(self, q: Tensor, kv: Tensor) -> Tensor:
        t = self.attend(q, kv)
        return t + self.ffn(self.norm2(t))


class Encoder(Module):
    """A stack of ``cfg.layers`` layers. Cross mode feeds the same kv to every layer."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, residual: bool = False):
        self.cfg = cfg
        if cfg.mode == "self":
            self.layers = [SelfAttentionLayer(cfg, rng) for _ in range(cfg.layers)]
        else:
            self.layers = [CrossAttentionLayer(cfg, rng, residual) for _ in range(cfg.layers)]

    def forward(self, tokens: Tensor, kv: Tensor | None = None) -> Tensor:
        if self.cfg.mode == "self" and kv is not None:
            raise ContractError("self-attention encoder does not take key/value tokens")
        if self.cfg.mode == "cross" and kv is None:
            raise ContractError("cross-attention encoder requires key/value tokens")
        if kv is not None and kv.shape[-1] != tokens.shape[-1]:
            raise DimensionError(f"query width {tokens.shape[-1]} != key/value width {kv.shape[-1]}")
        for layer in self.layers:
            tokens = layer(tokens) if kv is None else layer(tokens, kv)
        return tokens

    def attention_probs(self) -> list[np.ndarray]:
        return [layer.attn.last_probs for layer in self.layers if layer.attn.last_probs is not None]
