"""Long-form generation with overlapping windows.

Windows of ``window_s`` seconds start every ``window_s - overlap_s`` seconds.
Window ``i`` covers ``[t, t + window_s)`` (clipped to the video end) and is
conditioned on the whole-video long-term features plus the frames of its own
span. Its first ``overlap_s`` seconds are teacher-forced from the previous
window's tail, so only ``[t + overlap_s, end)`` is sampled. For bookkeeping,
window ``i`` owns (emits) ``[t, t + window_s - overlap_s)``; the final window
emits up to the video end. The emitted spans tile ``[0, L]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import typing as tp
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .codec import Codec, Waveform
from .decoder import DEFAULT_TEMPERATURE, DEFAULT_TOP_K
from .errors import ConfigError
from .frontend import FrameFeatures, default_n_long, even_indices
from .model import MusicModel
from .tokens import TokenMatrix

DEFAULT_WINDOW_S = 30.0
DEFAULT_OVERLAP_S = 5.0


@dataclass(frozen=True)
class Window:
    t_start: float
    t_end: float
    emit_start: float
    emit_end: float


@dataclass
class WindowSchedule:
    duration_s: float
    window_s: float = DEFAULT_WINDOW_S
    overlap_s: float = DEFAULT_OVERLAP_S
    windows: tp.List[Window] = field(default_factory=list)

    @property
    def starts(self) -> tp.List[float]:
        return [w.t_start for w in self.windows]

    def to_dict(self) -> dict:
        return {"duration_s": self.duration_s, "window_s": self.window_s, "overlap_s": self.overlap_s,
                "windows": [asdict(w) for w in self.windows]}


def plan_windows(duration_s: float, window_s: float = DEFAULT_WINDOW_S,
                 overlap_s: float = DEFAULT_OVERLAP_S) -> WindowSchedule:
    """Enumerate windows with ``t <- t + window_s - overlap_s`` until the video end.

    >>> [w.t_start for w in plan_windows(100).windows]
    [0.0, 25.0, 50.0, 75.0]
    """
    if duration_s <= 0:
        raise ConfigError(f"duration must be positive, got {duration_s}")
    if not 0 < overlap_s < window_s:
        raise ConfigError(f"need 0 < overlap ({overlap_s}) < window ({window_s})")
    hop = window_s - overlap_s
    windows = []
    t = 0.0
    while True:
        end = min(t + window_s, duration_s)
        if end >= duration_s:
            windows.append(Window(t, duration_s, t, duration_s))
            break
        windows.append(Window(t, end, t, t + hop))
        t = t + hop
    return WindowSchedule(float(duration_s), float(window_s), float(overlap_s), windows)


@dataclass
class LongFormResult:
    tokens: TokenMatrix
    waveform: Waveform
    schedule: WindowSchedule
    seed: tp.Optional[int]


def _to_index(seconds: float, rate: float) -> int:
    return int(round(seconds * rate))


@torch.no_grad()
def generate_long(features: FrameFeatures, model: MusicModel, codec: Codec,
                  schedule: tp.Optional[WindowSchedule] = None, seed: tp.Optional[int] = 0,
                  top_k: int = DEFAULT_TOP_K, temperature: float = DEFAULT_TEMPERATURE,
                  n_long: tp.Optional[int] = None) -> LongFormResult:
    """Generate music tokens for the whole video and decode them.

    A single random stream seeded by ``seed`` is consumed window after
    window, so the first window matches a standalone :meth:`generate` call
    with the same seed and conditioning.
    """
    fr = codec.frame_rate
    fps = features.fps
    L = features.duration_s
    if schedule is None:
        schedule = plan_windows(L)
    if abs(schedule.duration_s - L) > 1.0 / fps:
        raise IndexError(f"schedule covers {schedule.duration_s} s but features cover {L} s")
    K, V = model.decoder.K, model.decoder.V
    if K != codec.n_codebooks or V != codec.cardinality:
        raise ConfigError(f"model tokens (K={K}, V={V}) do not match codec "
                          f"(K={codec.n_codebooks}, V={codec.cardinality})")
    model.eval()
    dtype = next(model.parameters()).dtype
    values = torch.as_tensor(features.values, dtype=dtype)
    n_long = n_long or default_n_long(features.n_frames)
    long_refined = model.fusion.refine(values[even_indices(features.n_frames, n_long)], "long")

    rng = np.random.default_rng(seed)
    total = _to_index(schedule.duration_s, fr)
    stream = np.zeros((K, 0), dtype=np.int64)
    for i, w in enumerate(schedule.windows):
        f0 = min(_to_index(w.t_start, fps), features.n_frames - 1)
        f1 = max(min(_to_index(w.t_end, fps), features.n_frames), f0 + 1)
        z = model.fusion(None, values[f0:f1], long_refined=long_refined)
        tok0 = _to_index(w.t_start, fr)
        tok1 = total if i == len(schedule.windows) - 1 else _to_index(w.t_end, fr)
        prompt = None
        if i > 0:
            prompt_end = min(_to_index(w.t_start + schedule.overlap_s, fr), stream.shape[1], tok1)
            if prompt_end > tok0:
                prompt = TokenMatrix(stream[:, tok0:prompt_end], V)
        have = stream.shape[1]
        n_new = tok1 - have
        if n_new < 1:
            continue
        out = model.generate(z, n_new, top_k=top_k, temperature=temperature, seed=rng, prompt=prompt)
        stream = np.concatenate([stream, out.tokens[:, out.S - n_new:]], axis=1)
    tokens = TokenMatrix(stream[:, :total], V)
    return LongFormResult(tokens, codec.decode(tokens), schedule, seed)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def sidecar(result: LongFormResult, config: tp.Optional[dict] = None, **extra) -> dict:
    """JSON-ready record of what produced a generated file."""
    doc = {
        "seed": result.seed,
        "schedule": result.schedule.to_dict(),
        "n_windows": len(result.schedule.windows),
        "tokens": {"K": result.tokens.K, "S": result.tokens.S, "V": result.tokens.cardinality},
        "audio": {"sample_rate": result.waveform.sample_rate,
                  "duration_s": result.waveform.duration_s},
    }
    if config is not None:
        doc["config"] = config
        doc["config_hash"] = config_hash(config)
    doc.update(extra)
    return doc


def emitted_seconds(schedule: WindowSchedule) -> float:
    return math.fsum(w.emit_end - w.emit_start for w in schedule.windows)
