"""Autoregressive codec-token decoder with cross-attention conditioning."""

from __future__ import annotations

import typing as tp
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError
from .layers import DecoderBlock, sinusoidal_positions
from .tokens import DEFAULT_PATTERN, PATTERNS, TokenMatrix, n_steps, step_index

DEFAULT_TOP_K = 250
DEFAULT_TEMPERATURE = 1.0

SeedLike = tp.Union[None, int, tp.Sequence[int], np.random.Generator]


@dataclass
class DecoderConfig:
    n_codebooks: int = 4    # K
    cardinality: int = 255  # V; id V is the start/filler token
    dim: int = 32           # M
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    pattern: str = DEFAULT_PATTERN

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown codebook pattern {self.pattern!r}")
        if min(self.n_codebooks, self.cardinality, self.dim, self.layers, self.heads) < 1:
            raise ConfigError("decoder dimensions must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"decoder width {self.dim} not divisible by {self.heads} heads")


def sample_topk(logits, k: int = DEFAULT_TOP_K, temperature: float = DEFAULT_TEMPERATURE,
                rng: SeedLike = None) -> int:
    """Draw one id from the ``k`` largest logits after temperature scaling.

    Probabilities are ``softmax(logits / temperature)`` renormalized over the
    top-``k`` set. Ties at the cut-off keep the lower ids. ``rng`` may be a
    seed or a ``numpy.random.Generator`` (consumed in place).
    """
    if k < 1:
        raise ConfigError(f"top-k needs k >= 1, got {k}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64).ravel()
    finite = np.isfinite(logits)
    if not finite.any():
        raise NumericError("all logits are -inf or non-finite; nothing to sample")
    if np.isnan(logits).any() or np.isposinf(logits).any():
        raise NumericError("logits contain NaN or +inf")
    k = min(k, int(finite.sum()))
    top = np.argsort(-logits, kind="stable")[:k]
    if k == 1:
        return int(top[0])
    scaled = logits[top] / temperature
    p = np.exp(scaled - scaled.max())
    p /= p.sum()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return int(rng.choice(top, p=p))


class TokenDecoder(nn.Module):
    """Transformer over the schedule grid of a codebook pattern.

    The input at step ``t`` is the sum of the K codebook embeddings of the
    grid column ``t - 1`` (the start id ``V`` for ``t = 0``) plus a sinusoidal
    position. Every block cross-attends to the conditioning rows. One linear
    head per codebook scores ``V + 1`` ids.
    """

    def __init__(self, config: tp.Optional[DecoderConfig] = None):
        super().__init__()
        self.config = config = config or DecoderConfig()
        config.validate()
        K, V, M = config.n_codebooks, config.cardinality, config.dim
        self.embeddings = nn.ModuleList([nn.Embedding(V + 1, M) for _ in range(K)])
        self.blocks = nn.ModuleList([DecoderBlock(M, config.heads, config.mlp_ratio) for _ in range(config.layers)])
        self.norm = nn.LayerNorm(M)
        self.heads = nn.ModuleList([nn.Linear(M, V + 1) for _ in range(K)])

    @property
    def K(self) -> int:
        return self.config.n_codebooks

    @property
    def V(self) -> int:
        return self.config.cardinality

    def _check_cond(self, cond: torch.Tensor) -> None:
        if cond.shape[-1] != self.config.dim:
            raise ConfigError(f"conditioning width {cond.shape[-1]} != decoder width {self.config.dim}")

    def _embed(self, columns: torch.Tensor, offset: int) -> torch.Tensor:
        # columns: ... x K x n
        x = sum(emb(columns[..., k, :]) for k, emb in enumerate(self.embeddings))
        pos = sinusoidal_positions(columns.shape[-1], self.config.dim, offset=offset)
        return x + pos.to(x.dtype)

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm(x)
        return torch.stack([head(x) for head in self.heads], dim=-3)  # ... x K x n x (V+1)

    def step_logits(self, grid: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Logits for every schedule step of ``grid`` (``... x K x L`` -> ``... x K x L x (V+1)``).

        Step ``t`` sees only grid columns ``< t`` and the conditioning.
        """
        self._check_cond(cond)
        grid = torch.as_tensor(grid, dtype=torch.long)
        start = torch.full((*grid.shape[:-1], 1), self.V, dtype=torch.long)
        shifted = torch.cat([start, grid[..., :-1]], dim=-1)
        x = self._embed(shifted, 0).to(cond.dtype)
        for block in self.blocks:
            x = block(x, cond)
        return self._logits(x)

    def interleave_batch(self, tokens: torch.Tensor, pattern: tp.Optional[str] = None) -> torch.Tensor:
        pattern = pattern or self.config.pattern
        K, S = tokens.shape[-2:]
        steps = torch.as_tensor(step_index(pattern, K, S))
        grid = torch.full((*tokens.shape[:-1], n_steps(pattern, K, S)), self.V, dtype=torch.long)
        grid[..., torch.arange(K)[:, None], steps] = tokens.long()
        return grid

    def forward(self, tokens: tp.Union[TokenMatrix, torch.Tensor], cond: torch.Tensor,
                pattern: tp.Optional[str] = None) -> torch.Tensor:
        """Teacher-forced logits ``... x K x S x (V+1)`` for every token cell.

        The logits of cell ``(k, s)`` come from the schedule step at which the
        pattern emits that cell.
        """
        pattern = pattern or self.config.pattern
        if isinstance(tokens, TokenMatrix):
            tokens = torch.as_tensor(tokens.tokens)
        if tokens.shape[-2] != self.K:
            raise ConfigError(f"expected {self.K} codebooks, got {tokens.shape[-2]}")
        K, S = tokens.shape[-2:]
        logits = self.step_logits(self.interleave_batch(tokens, pattern), cond)
        steps = torch.as_tensor(step_index(pattern, K, S))
        return logits[..., torch.arange(K)[:, None], steps, :]

    forward_logits = forward

    @torch.no_grad()
    def generate(self, cond: torch.Tensor, n_steps_out: int, pattern: tp.Optional[str] = None,
                 top_k: int = DEFAULT_TOP_K, temperature: float = DEFAULT_TEMPERATURE,
                 seed: SeedLike = None, prompt: tp.Optional[TokenMatrix] = None) -> TokenMatrix:
        """Sample ``n_steps_out`` new timesteps, continuing ``prompt`` if given.

        Returns the prompt followed by the new timesteps (``K x (P + n)``).
        Prompt cells are teacher-forced and consume no randomness; the rest
        are drawn in schedule order, codebook 0 first within a step. The
        filler id is never sampled.
        """
        if n_steps_out < 1:
            raise ConfigError(f"n_steps must be >= 1, got {n_steps_out}")
        pattern = pattern or self.config.pattern
        self._check_cond(cond)
        if cond.dim() != 2:
            raise ConfigError("generation takes a single conditioning matrix (rows x M)")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        K, V = self.K, self.V
        P = 0
        if prompt is not None:
            if prompt.K != K or prompt.cardinality != V:
                raise ConfigError(f"prompt is {prompt.K} x {prompt.S} over {prompt.cardinality} ids; "
                                  f"decoder expects K={K}, V={V}")
            P = prompt.S
        T = P + n_steps_out
        steps = step_index(pattern, K, T)
        L = n_steps(pattern, K, T)
        grid = np.full((K, L), V, dtype=np.int64)
        forced = np.zeros((K, L), dtype=bool)
        todo = np.zeros((K, L), dtype=bool)
        rows = np.arange(K)[:, None]
        todo[rows, steps] = True
        if P:
            grid[rows, steps[:, :P]] = prompt.tokens
            forced[rows, steps[:, :P]] = True

        was_training = self.training
        self.eval()
        caches: tp.List[dict] = [{} for _ in self.blocks]
        column = torch.full((K, 1), V, dtype=torch.long)
        try:
            for t in range(L):
                x = self._embed(column, t).to(cond.dtype)
                for block, cache in zip(self.blocks, caches):
                    x = block(x, cond, cache=cache)
                logits = self._logits(x)[:, 0, :].double().numpy()
                for k in range(K):
                    if todo[k, t] and not forced[k, t]:
                        row = logits[k].copy()
                        row[V] = -np.inf
                        grid[k, t] = sample_topk(row, top_k, temperature, rng)
                column = torch.as_tensor(grid[:, t:t + 1])
        finally:
            self.train(was_training)
        return TokenMatrix(grid[rows, steps], V)

    def config_dict(self) -> dict:
        return asdict(self.config)
