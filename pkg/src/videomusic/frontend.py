"""Video decoding, per-frame feature extraction and long/short frame selection.

Frames are handled as ``N x C x H x W`` float arrays with pixel values in
``[0, 1]``. A frame encoder maps each frame to a ``P x D`` token grid, where
token 0 is the class (summary) token.
"""

from __future__ import annotations

import os
import typing as tp
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DecodeError, EmptyInputError

DEFAULT_FPS = 2.0
DEFAULT_SEGMENT_S = 30.0
MAX_LONG_FRAMES = 64


@dataclass
class VideoClip:
    frames: np.ndarray  # N x C x H x W, values in [0, 1]
    fps: float
    duration_s: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4:
            raise ConfigError(f"frames must be N x C x H x W, got shape {self.frames.shape}")
        if self.fps <= 0 or self.duration_s <= 0:
            raise ConfigError(f"fps and duration must be positive (fps={self.fps}, duration={self.duration_s})")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class FrameFeatures:
    values: np.ndarray  # N x P x D
    fps: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ConfigError(f"features must be N x P x D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("frame features contain non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.values.shape[2]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


class FrameEncoder(tp.Protocol):
    """Adapter contract for visual encoders.

    ``tokens_per_frame`` (P, class token included) and ``dim`` (D) are known
    before any frame is seen. Calling the encoder on a ``B x C x H x W`` batch
    returns ``B x P x D``.
    """

    tokens_per_frame: int
    dim: int

    def __call__(self, frames: np.ndarray) -> np.ndarray: ...


class StubFrameEncoder:
    """Deterministic patch encoder used for offline work and tests.

    Each frame is cut into a ``grid x grid`` array of patches. Every patch is
    mean-pooled per channel and mapped through a fixed seeded ``C x D``
    projection plus bias. The class token is the mean of the patch tokens.
    """

    def __init__(self, channels: int = 3, grid: int = 2, dim: int = 16, seed: int = 0):
        if grid < 1 or dim < 1 or channels < 1:
            raise ConfigError("grid, dim and channels must be positive")
        self.channels = channels
        self.grid = grid
        self.dim = dim
        self.tokens_per_frame = grid * grid + 1
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((channels, dim)).astype(np.float32)
        self.bias = (0.1 * rng.standard_normal(dim)).astype(np.float32)

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[1] != self.channels:
            raise ConfigError(
                f"stub encoder expects B x {self.channels} x H x W frames, got {frames.shape}")
        B, C, H, W = frames.shape
        if H < self.grid or W < self.grid:
            raise ConfigError(f"frame {H}x{W} smaller than patch grid {self.grid}")
        row_edges = (np.arange(self.grid + 1) * H) // self.grid
        col_edges = (np.arange(self.grid + 1) * W) // self.grid
        pooled = np.empty((B, self.grid * self.grid, C), dtype=np.float32)
        for i in range(self.grid):
            for j in range(self.grid):
                patch = frames[:, :, row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
                pooled[:, i * self.grid + j] = patch.mean(axis=(2, 3))
        patches = pooled @ self.weight + self.bias
        cls = patches.mean(axis=1, keepdims=True)
        return np.concatenate([cls, patches], axis=1)


def sample_frames(video_path: tp.Union[str, os.PathLike], fps: float = DEFAULT_FPS,
                  max_duration_s: tp.Optional[float] = None) -> VideoClip:
    """Decode a video file into frames sampled at ``k / fps`` seconds.

    The frame shown at time ``t`` is the source frame with index
    ``floor(t * native_fps)``. Sampling stops at ``max_duration_s`` when given.

    Raises:
        DecodeError: the file is missing or cannot be decoded.
        EmptyInputError: the video has no frames.
    """
    import cv2

    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    path = os.fspath(video_path)
    if not os.path.isfile(path):
        raise DecodeError(f"video not found: {path}")
    cap = cv2.VideoCapture(path)
    try:
        if not cap.isOpened():
            raise DecodeError(f"cannot open video: {path}")
        native_fps = cap.get(cv2.CAP_PROP_FPS)
        if not native_fps or native_fps <= 0:
            raise DecodeError(f"video reports no frame rate: {path}")
        decoded = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            decoded.append(frame)
    finally:
        cap.release()
    if not decoded:
        raise EmptyInputError(f"video has no frames: {path}")

    duration = len(decoded) / native_fps
    if max_duration_s is not None:
        duration = min(duration, max_duration_s)
    n = max(1, int(round(duration * fps)))
    # exact integer arithmetic where both rates are integral avoids floor(2.9999...)
    times = np.arange(n) / fps
    src = np.floor(times * native_fps + 1e-9).astype(int)
    src = np.clip(src, 0, len(decoded) - 1)
    frames = np.stack([cv2.cvtColor(decoded[i], cv2.COLOR_BGR2RGB) for i in src])
    frames = frames.transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    return VideoClip(frames=frames, fps=fps, duration_s=duration)


def encode_frames(clip: VideoClip, encoder: FrameEncoder, batch_size: int = 64) -> FrameFeatures:
    """Run ``encoder`` over every frame of ``clip`` in order."""
    out = []
    for start in range(0, clip.n_frames, batch_size):
        batch = encoder(clip.frames[start:start + batch_size])
        batch = np.asarray(batch, dtype=np.float32)
        expected = (min(batch_size, clip.n_frames - start), encoder.tokens_per_frame, encoder.dim)
        if batch.shape != expected:
            raise ConfigError(f"encoder returned {batch.shape}, declared {expected}")
        out.append(batch)
    return FrameFeatures(values=np.concatenate(out, axis=0), fps=clip.fps)


def even_indices(n_total: int, n_select: int) -> np.ndarray:
    """Endpoint-inclusive evenly spaced indices ``round(i * (N-1) / (n-1))``.

    Halves round to the nearest even integer, so ``even_indices(10, 5)`` is
    ``[0, 2, 4, 7, 9]``. Computed in integers to keep the rounding exact.
    """
    if not 1 <= n_select <= n_total:
        raise IndexError(f"need 1 <= n_select <= {n_total}, got {n_select}")
    if n_select == 1:
        return np.zeros(1, dtype=int)
    i = np.arange(n_select)
    num = i * (n_total - 1)
    den = n_select - 1
    q, r = np.divmod(num, den)
    up = (2 * r > den) | ((2 * r == den) & (q % 2 == 1))
    return q + up.astype(int)


def default_n_long(n_frames: int) -> int:
    return min(n_frames, MAX_LONG_FRAMES)


def select_long_short(features: tp.Union[FrameFeatures, np.ndarray], n_long: int, n_short: int,
                      short_start: int) -> tp.Tuple[np.ndarray, np.ndarray]:
    """Pick the long-term (evenly spaced) and short-term (contiguous) frames.

    Returns:
        ``(long, short)`` arrays of shape ``n_long x P x D`` and ``n_short x P x D``.
    """
    values = features.values if isinstance(features, FrameFeatures) else np.asarray(features)
    N = values.shape[0]
    long_idx = even_indices(N, n_long)
    if n_short < 1 or short_start < 0 or short_start + n_short > N:
        raise IndexError(f"short window [{short_start}, {short_start + n_short}) outside [0, {N})")
    return values[long_idx], values[short_start:short_start + n_short]
