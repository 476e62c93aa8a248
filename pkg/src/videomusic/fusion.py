"""Long-short-term visual conditioning.

Two term refiners turn selected frame features into per-frame multi-token
sequences, a cross-attention step lets the short-term (local window) tokens
query the long-term (whole video) tokens, and a linear map projects the
result into the decoder's width.

Layout convention for term features: row ``f * n_heads + h`` holds head ``h``
of frame ``f`` (frame-major, head-minor).
"""

from __future__ import annotations

import math
import typing as tp
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError
from .layers import EncoderBlock, check_finite, stable_softmax


@dataclass
class FusionConfig:
    dim: int = 16           # D == C, frame feature width
    out_dim: int = 32       # M, decoder width
    term_heads: int = 4     # N_H, tokens per frame after refinement
    fusion_heads: int = 4   # h, cross-attention heads
    refiner_layers: int = 2
    max_frames: int = 256

    def validate(self) -> None:
        if self.dim % self.fusion_heads:
            raise ConfigError(f"feature dim {self.dim} not divisible by fusion heads {self.fusion_heads}")
        if self.dim % self.term_heads:
            raise ConfigError(f"feature dim {self.dim} not divisible by term heads {self.term_heads}")
        if min(self.dim, self.out_dim, self.term_heads, self.fusion_heads, self.max_frames) < 1:
            raise ConfigError("fusion dimensions must be positive")
        if self.refiner_layers < 0:
            raise ConfigError("refiner_layers must be >= 0")


class TermRefiner(nn.Module):
    """Refines ``N_t x P x D`` selected features into ``(N_t * N_H) x D`` term features.

    Only the class token of each frame is kept. A learned temporal embedding
    is added, the sequence goes through pre-norm self-attention blocks, and
    ``N_H`` per-head linear maps expand every frame into ``N_H`` tokens.
    """

    def __init__(self, dim: int, n_heads: int, layers: int = 2, max_frames: int = 256):
        super().__init__()
        self.dim = dim
        self.n_heads = n_heads
        self.max_frames = max_frames
        self.pos = nn.Parameter(torch.zeros(max_frames, dim))
        self.blocks = nn.ModuleList([EncoderBlock(dim, n_heads) for _ in range(layers)])
        self.heads = nn.Linear(dim, n_heads * dim)

    def identity_(self) -> "TermRefiner":
        """Configure the refiner to replicate each class token ``N_H`` times."""
        with torch.no_grad():
            self.pos.zero_()
            for block in self.blocks:
                block.zero_residual_branches_()
            self.heads.weight.copy_(torch.eye(self.dim).repeat(self.n_heads, 1))
            self.heads.bias.zero_()
        return self

    def forward(self, selected: torch.Tensor) -> torch.Tensor:
        if selected.shape[-1] != self.dim:
            raise ConfigError(f"refiner expects feature dim {self.dim}, got {selected.shape[-1]}")
        n_frames = selected.shape[-3]
        if n_frames > self.max_frames:
            raise ConfigError(f"{n_frames} frames exceed refiner capacity {self.max_frames}")
        x = selected[..., 0, :] + self.pos[:n_frames].to(selected.dtype)
        for block in self.blocks:
            x = block(x)
        out = self.heads(x)  # ... x N_t x (N_H * D)
        return out.reshape(*out.shape[:-2], n_frames * self.n_heads, self.dim)


def cross_attention(short: torch.Tensor, long: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                    w_v: torch.Tensor, heads: int,
                    return_weights: bool = False) -> tp.Union[torch.Tensor, tp.Tuple[torch.Tensor, torch.Tensor]]:
    """Residual multi-head cross-attention from short-term to long-term tokens.

    ``w_q``, ``w_k`` and ``w_v`` are ``C x C`` matrices whose column blocks of
    width ``C / heads`` are the per-head projections. The result is
    ``softmax(q k^T / sqrt(C / heads)) v`` with heads concatenated, plus
    ``short``.
    """
    C = short.shape[-1]
    if long.shape[-1] != C:
        raise ConfigError(f"short width {C} != long width {long.shape[-1]}")
    if w_q.shape != (C, C):
        raise ConfigError(f"projection must be {C} x {C}, got {tuple(w_q.shape)}")
    d = C // heads

    def split(x):
        return x.reshape(*x.shape[:-1], heads, d).transpose(-3, -2)

    q, k, v = split(short @ w_q), split(long @ w_k), split(long @ w_v)
    logits = q @ k.transpose(-1, -2) / math.sqrt(d)
    check_finite("attention logits", logits, short=short, long=long)
    weights = stable_softmax(logits)
    attended = (weights @ v).transpose(-3, -2)
    z = attended.reshape(*attended.shape[:-2], C) + short
    if return_weights:
        return z, weights
    return z


class LSTFusion(nn.Module):
    """Long-short-term fusion: refine both terms, cross-attend, project to width M."""

    def __init__(self, config: tp.Optional[FusionConfig] = None):
        super().__init__()
        self.config = config = config or FusionConfig()
        config.validate()
        C = config.dim
        self.long_refiner = TermRefiner(C, config.term_heads, config.refiner_layers, config.max_frames)
        self.short_refiner = TermRefiner(C, config.term_heads, config.refiner_layers, config.max_frames)
        std = 1.0 / math.sqrt(C)
        self.w_q = nn.Parameter(torch.randn(C, C) * std)
        self.w_k = nn.Parameter(torch.randn(C, C) * std)
        self.w_v = nn.Parameter(torch.randn(C, C) * std)
        self.proj = nn.Linear(C, config.out_dim)

    def refine(self, selected: torch.Tensor, branch: str) -> torch.Tensor:
        if branch == "long":
            return self.long_refiner(selected)
        if branch == "short":
            return self.short_refiner(selected)
        raise ConfigError(f"unknown branch {branch!r}; expected 'long' or 'short'")

    def fuse(self, short: torch.Tensor, long: torch.Tensor, return_weights: bool = False):
        return cross_attention(short, long, self.w_q, self.w_k, self.w_v,
                               self.config.fusion_heads, return_weights=return_weights)

    def project(self, z_prime: torch.Tensor) -> torch.Tensor:
        if z_prime.shape[-1] != self.config.dim:
            raise ConfigError(f"projection expects width {self.config.dim}, got {z_prime.shape[-1]}")
        return self.proj(z_prime)

    def forward(self, long_selected: torch.Tensor, short_selected: torch.Tensor,
                long_refined: tp.Optional[torch.Tensor] = None) -> torch.Tensor:
        """Map ``(N_l x P x D, N_s x P x D)`` selections to ``(N_s * N_H) x M`` conditioning.

        ``long_refined`` lets callers reuse long-term features computed once
        per video.
        """
        if long_refined is None:
            long_refined = self.refine(long_selected, "long")
        short_refined = self.refine(short_selected, "short")
        return self.project(self.fuse(short_refined, long_refined))

    def config_dict(self) -> dict:
        return asdict(self.config)
