"""Codec token matrices and codebook interleaving patterns.

A token matrix is a ``K x S`` grid of codebook ids. Before modeling, it is
laid out on a ``K x L`` schedule grid: column ``t`` of the grid is the
``t``-th decoding step and row ``k`` holds codebook ``k``'s token for that
step, or the filler id ``V`` when codebook ``k`` emits nothing at that step.

Patterns (``step[k, s]`` is the step at which cell ``(k, s)`` is emitted):

========  ==========================  ===========
pattern   step[k, s]                  L
========  ==========================  ===========
parallel  s                           S
flatten   s * K + k                   K * S
delay     s + k                       S + K - 1
vall_e    s if k == 0 else S + s      S (K=1), 2S
========  ==========================  ===========
"""

from __future__ import annotations

import os
import struct
import typing as tp
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

PATTERNS = ("parallel", "flatten", "delay", "vall_e")
DEFAULT_PATTERN = "delay"

_MAGIC = b"VMTK"
_VERSION = 1
_HEADER = struct.Struct("<4sHBBIII")
_PATTERN_CODES = {None: 0, "parallel": 1, "flatten": 2, "delay": 3, "vall_e": 4}


@dataclass
class TokenMatrix:
    tokens: np.ndarray  # K x S ints in [0, V]; V is the filler/padding id
    cardinality: int    # V

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 2 or min(self.tokens.shape) < 1:
            raise FormatError(f"token matrix must be K x S with K, S >= 1, got {self.tokens.shape}")
        if self.cardinality < 1:
            raise FormatError(f"cardinality must be positive, got {self.cardinality}")
        if self.tokens.min() < 0 or self.tokens.max() > self.cardinality:
            raise FormatError(f"token ids must lie in [0, {self.cardinality}]")

    @property
    def K(self) -> int:
        return self.tokens.shape[0]

    @property
    def S(self) -> int:
        return self.tokens.shape[1]

    @property
    def filler(self) -> int:
        return self.cardinality

    def __eq__(self, other) -> bool:
        return (isinstance(other, TokenMatrix) and self.cardinality == other.cardinality
                and np.array_equal(self.tokens, other.tokens))

    def to_bytes(self, pattern: tp.Optional[str] = None) -> bytes:
        """Serialize as a 20-byte header plus row-major little-endian int32 ids.

        Header fields, little-endian: magic ``b"VMTK"``, version (u16),
        pattern code (u8; 0 none, 1 parallel, 2 flatten, 3 delay, 4 vall_e),
        reserved (u8), K (u32), S (u32), V (u32).
        """
        if pattern not in _PATTERN_CODES:
            raise ConfigError(f"unknown pattern {pattern!r}")
        header = _HEADER.pack(_MAGIC, _VERSION, _PATTERN_CODES[pattern], 0, self.K, self.S, self.cardinality)
        return header + self.tokens.astype("<i4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> tp.Tuple["TokenMatrix", tp.Optional[str]]:
        if len(data) < _HEADER.size:
            raise FormatError("token stream shorter than its header")
        magic, version, code, _, K, S, V = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise FormatError(f"not a version-{_VERSION} token stream")
        codes = {v: k for k, v in _PATTERN_CODES.items()}
        if code not in codes:
            raise FormatError(f"unknown pattern code {code}")
        body = data[_HEADER.size:]
        if len(body) != 4 * K * S:
            raise FormatError(f"expected {K * S} ids, found {len(body) // 4}")
        tokens = np.frombuffer(body, dtype="<i4").reshape(K, S)
        return cls(tokens, V), codes[code]

    def save(self, path: tp.Union[str, os.PathLike], pattern: tp.Optional[str] = None) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes(pattern))

    @classmethod
    def load(cls, path: tp.Union[str, os.PathLike]) -> tp.Tuple["TokenMatrix", tp.Optional[str]]:
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _check_pattern(pattern: str) -> None:
    if pattern not in PATTERNS:
        raise ConfigError(f"unknown codebook pattern {pattern!r}; choose from {PATTERNS}")


def n_steps(pattern: str, K: int, S: int) -> int:
    """Number of schedule steps needed for ``S`` timesteps of ``K`` codebooks."""
    _check_pattern(pattern)
    if pattern == "parallel":
        return S
    if pattern == "flatten":
        return K * S
    if pattern == "delay":
        return S + K - 1
    return S if K == 1 else 2 * S


def step_index(pattern: str, K: int, S: int) -> np.ndarray:
    """``K x S`` array giving the schedule step of every token cell."""
    _check_pattern(pattern)
    k = np.arange(K)[:, None]
    s = np.arange(S)[None, :]
    if pattern == "parallel":
        return np.broadcast_to(s, (K, S)).copy()
    if pattern == "flatten":
        return s * K + k
    if pattern == "delay":
        return s + k
    return np.where(k == 0, s, S + s)


def complete_timesteps(pattern: str, K: int, steps: int, S: tp.Optional[int] = None) -> int:
    """How many whole timesteps (all K codebooks present) the first ``steps`` steps yield.

    The Vall-E layout needs the total timestep count ``S`` because its second
    stage starts at step ``S``.
    """
    _check_pattern(pattern)
    if pattern == "parallel" or K == 1:
        return steps
    if pattern == "flatten":
        return steps // K
    if pattern == "delay":
        return max(0, steps - K + 1)
    if S is None:
        raise ConfigError("vall_e completion count needs the timestep total S")
    return min(S, max(0, steps - S))


@dataclass
class InterleavedSequence:
    grid: np.ndarray  # K x L schedule grid
    pattern: str
    K: int
    S: int
    cardinality: int

    @property
    def filler(self) -> int:
        return self.cardinality

    @property
    def n_steps(self) -> int:
        return self.grid.shape[1]

    def steps(self) -> tp.List[tp.Tuple[int, ...]]:
        """Per-step tuples of the K slots (filler where nothing is emitted)."""
        return [tuple(int(x) for x in col) for col in self.grid.T]

    @property
    def ids(self) -> np.ndarray:
        """The emitted tokens in decoding order (step-major, then codebook)."""
        steps = step_index(self.pattern, self.K, self.S)
        order = np.lexsort((np.repeat(np.arange(self.K)[:, None], self.S, 1).ravel(), steps.ravel()))
        tokens = self.grid[np.arange(self.K)[:, None], steps].ravel()
        return tokens[order]


def interleave(y: TokenMatrix, pattern: str = DEFAULT_PATTERN) -> InterleavedSequence:
    """Lay a token matrix out on the schedule grid of ``pattern``."""
    L = n_steps(pattern, y.K, y.S)
    grid = np.full((y.K, L), y.filler, dtype=np.int64)
    steps = step_index(pattern, y.K, y.S)
    grid[np.arange(y.K)[:, None], steps] = y.tokens
    return InterleavedSequence(grid, pattern, y.K, y.S, y.cardinality)


def deinterleave(seq: InterleavedSequence) -> TokenMatrix:
    """Invert :func:`interleave`, checking that every non-cell slot holds the filler."""
    K, S = seq.K, seq.S
    L = n_steps(seq.pattern, K, S)
    grid = np.asarray(seq.grid)
    if grid.shape != (K, L):
        raise FormatError(f"{seq.pattern} grid for K={K}, S={S} must be {(K, L)}, got {grid.shape}")
    steps = step_index(seq.pattern, K, S)
    cell = np.zeros((K, L), dtype=bool)
    cell[np.arange(K)[:, None], steps] = True
    if np.any(grid[~cell] != seq.filler):
        bad = np.argwhere((~cell) & (grid != seq.filler))[0]
        raise FormatError(f"non-filler id {grid[tuple(bad)]} at codebook {bad[0]}, step {bad[1]}")
    return TokenMatrix(grid[np.arange(K)[:, None], steps], seq.cardinality)
