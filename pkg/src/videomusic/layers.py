"""Small transformer building blocks shared by the fusion module and the decoder."""

from __future__ import annotations

import math
import typing as tp

import torch
from torch import nn

from .errors import ConfigError, NumericError


def stable_softmax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax with explicit max subtraction; fully masked rows stay NaN."""
    shifted = logits - logits.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def check_finite(name: str, tensor: torch.Tensor, **inputs: torch.Tensor) -> None:
    if torch.isfinite(tensor).all():
        return
    details = ", ".join(
        f"{k}: shape={tuple(v.shape)} max|x|={v.detach().abs().max().item():.3g} "
        f"nan={int(torch.isnan(v).sum())}" for k, v in inputs.items())
    raise NumericError(f"non-finite values in {name} ({int((~torch.isfinite(tensor)).sum())} cells); {details}")


class MultiHeadAttention(nn.Module):
    """Standard multi-head attention with optional causal mask and key/value cache."""

    def __init__(self, dim: int, heads: int, bias: bool = True):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=bias)
        self.k = nn.Linear(dim, dim, bias=bias)
        self.v = nn.Linear(dim, dim, bias=bias)
        self.out = nn.Linear(dim, dim, bias=bias)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.dim // self.heads).transpose(-3, -2)

    def forward(self, x: torch.Tensor, context: tp.Optional[torch.Tensor] = None,
                causal: bool = False, cache: tp.Optional[dict] = None) -> torch.Tensor:
        """Attend from ``x`` to ``context`` (self-attention when ``context`` is None).

        With a ``cache`` dict, keys and values of earlier calls are kept and
        prepended; ``x`` then holds only the new positions.
        """
        src = x if context is None else context
        q = self._split(self.q(x))
        if cache is not None and context is not None and "k" in cache:
            k, v = cache["k"], cache["v"]
        else:
            k = self._split(self.k(src))
            v = self._split(self.v(src))
            if cache is not None:
                if context is None and "k" in cache:
                    k = torch.cat([cache["k"], k], dim=-2)
                    v = torch.cat([cache["v"], v], dim=-2)
                cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dim // self.heads)
        if causal:
            n_q, n_k = scores.shape[-2], scores.shape[-1]
            # queries are the last n_q of n_k positions
            qpos = torch.arange(n_k - n_q, n_k).unsqueeze(-1)
            kpos = torch.arange(n_k).unsqueeze(0)
            scores = scores.masked_fill(kpos > qpos, float("-inf"))
        weights = stable_softmax(scores)
        out = (weights @ v).transpose(-3, -2)
        out = out.reshape(*out.shape[:-2], self.dim)
        return self.out(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, mlp_ratio * dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))

    def zero_residual_branches_(self) -> None:
        for lin in (self.attn.out, self.ff.fc2):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)


class DecoderBlock(nn.Module):
    """Pre-norm block: causal self-attention, cross-attention to conditioning, MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, mlp_ratio * dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor,
                cache: tp.Optional[dict] = None) -> torch.Tensor:
        self_cache = cross_cache = None
        if cache is not None:
            self_cache = cache.setdefault("self", {})
            cross_cache = cache.setdefault("cross", {})
        x = x + self.self_attn(self.norm1(x), causal=True, cache=self_cache)
        x = x + self.cross_attn(self.norm2(x), context=cond, cache=cross_cache)
        return x + self.ff(self.norm3(x))


def sinusoidal_positions(n: int, dim: int, offset: int = 0, max_period: float = 10000.0) -> torch.Tensor:
    """``n x dim`` sinusoidal position table starting at position ``offset``."""
    half = dim // 2
    pos = torch.arange(offset, offset + n, dtype=torch.float32).unsqueeze(-1)
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / max(half, 1))
    angles = pos * freqs
    table = torch.cat([torch.cos(angles), torch.sin(angles)], dim=-1)
    if dim % 2:
        table = torch.cat([table, torch.zeros(n, 1)], dim=-1)
    return table
