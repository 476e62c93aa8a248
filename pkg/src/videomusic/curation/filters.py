"""Per-record filters, music source separation and alignment ranking."""

from __future__ import annotations

import typing as tp

import numpy as np
from scipy.signal import butter, sosfiltfilt

from ..codec import Waveform
from ..errors import ConfigError, DataError, StageError
from ..extractors import AVEmbedder
from ..frontend import VideoClip
from .records import PASS, FilterConfig, MediaRecord, Verdict
from .ssim import ssim


def coarse_filter(rec: MediaRecord, cfg: FilterConfig) -> Verdict:
    """Rule-based checks on tracks, duration and metadata category."""
    if not rec.video:
        return Verdict(False, "missing_video")
    if not rec.audio:
        return Verdict(False, "missing_audio")
    if rec.duration_s is None:
        raise DataError(f"record {rec.id} has no duration metadata")
    if rec.duration_s < cfg.min_duration_s:
        return Verdict(False, "too_short")
    if rec.duration_s > cfg.max_duration_s:
        return Verdict(False, "too_long")
    blocked = {c.casefold() for c in cfg.blocked_categories}
    if rec.category and rec.category.casefold() in blocked:
        return Verdict(False, "blocked_domain")
    return PASS


def music_ratio(frame_probs, confidence: float) -> float:
    probs = np.asarray(frame_probs, dtype=np.float64).ravel()
    if probs.size == 0:
        raise DataError("no tagger frames to evaluate")
    if np.any(probs < 0) or np.any(probs > 1):
        raise DataError("music probabilities must lie in [0, 1]")
    return float(np.mean(probs > confidence))


def music_event_filter(frame_probs, cfg: FilterConfig) -> Verdict:
    """Keep clips where at least ``music_ratio`` of frames are music events.

    A frame is a music event when its probability is strictly greater than
    ``music_confidence``.
    """
    if music_ratio(frame_probs, cfg.music_confidence) >= cfg.music_ratio:
        return PASS
    return Verdict(False, "low_music_ratio")


def window_ssim(clip: VideoClip, n_windows: int) -> float:
    """Mean SSIM between first and last frame of ``n_windows`` contiguous, non-overlapping windows."""
    N = clip.n_frames
    if N < n_windows:
        raise DataError(f"{N} frames cannot fill {n_windows} windows")
    bounds = (np.arange(n_windows + 1) * N) // n_windows
    scores = [ssim(clip.frames[lo], clip.frames[hi - 1]) for lo, hi in zip(bounds[:-1], bounds[1:])]
    return float(np.mean(scores))


def static_video_filter(clip: VideoClip, cfg: FilterConfig) -> Verdict:
    """Reject videos whose frames barely change (see ``FilterConfig.ssim_reject``)."""
    score = window_ssim(clip, cfg.ssim_windows)
    if cfg.ssim_reject == "above":
        return Verdict(False, "static") if score > cfg.ssim_threshold else PASS
    return Verdict(False, "low_ssim") if score < cfg.ssim_threshold else PASS


class Separator(tp.Protocol):
    def separate(self, wave: Waveform) -> Waveform: ...


class IdentitySeparator:
    def separate(self, wave: Waveform) -> Waveform:
        return Waveform(wave.samples.copy(), wave.sample_rate)


class BandStopSeparator:
    """Removes the speech band with a zero-phase Butterworth band-stop filter."""

    def __init__(self, low_hz: float = 300.0, high_hz: float = 3400.0, order: int = 8):
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.order = order

    def separate(self, wave: Waveform) -> Waveform:
        if wave.samples.size == 0 or not np.any(wave.samples):
            return Waveform(np.zeros_like(wave.samples), wave.sample_rate)
        sos = butter(self.order, [self.low_hz, self.high_hz], btype="bandstop", fs=wave.sample_rate, output="sos")
        out = sosfiltfilt(sos, wave.samples)
        return Waveform(np.clip(out, -1.0, 1.0), wave.sample_rate)


def separate_music(wave: Waveform, separator: Separator) -> Waveform:
    """Return the accompaniment stem; adapter failures surface as :class:`StageError`."""
    try:
        out = separator.separate(wave)
    except Exception as exc:  # adapter boundary
        raise StageError(f"separator failed: {exc}") from exc
    if out.sample_rate != wave.sample_rate:
        raise StageError("separator changed the sample rate")
    hop = getattr(separator, "hop", 1)
    if abs(out.samples.size - wave.samples.size) > hop:
        raise StageError(f"separator changed length from {wave.samples.size} to {out.samples.size}")
    return out


def av_alignment(audio: Waveform, video: VideoClip, embedder: AVEmbedder) -> float:
    a, v = embedder.embed_audio(audio), embedder.embed_video(video)
    na, nv = np.linalg.norm(a), np.linalg.norm(v)
    if na == 0 or nv == 0:
        raise StageError("zero-norm alignment embedding")
    return float(a @ v / (na * nv))


def rank_and_split(records: tp.Sequence[MediaRecord], finetune_n: int, bench_n: int,
                   seed: int = 0, scorer: tp.Optional[tp.Callable[[MediaRecord], float]] = None) -> tp.List[MediaRecord]:
    """Assign splits to records that passed every earlier stage.

    Records are ordered by alignment score, highest first, ties broken by
    ascending id. The first ``finetune_n`` form the finetune split. A seeded
    uniform sample of ``bench_n`` of the remaining records becomes the
    benchmark candidate pool and is kept out of training; the rest is the
    pretrain split. Records lacking a score are scored with ``scorer``.
    Input order does not affect the outcome.
    """
    if finetune_n < 0 or bench_n < 0:
        raise ConfigError("split sizes must be non-negative")
    if finetune_n > len(records):
        raise ConfigError(f"finetune_n={finetune_n} exceeds the {len(records)} available records")
    if finetune_n + bench_n > len(records):
        raise ConfigError(f"finetune_n + bench_n = {finetune_n + bench_n} exceeds {len(records)} records")
    for rec in records:
        if rec.alignment_score is None:
            if scorer is None:
                raise DataError(f"record {rec.id} has no alignment score and no scorer was given")
            rec.alignment_score = float(scorer(rec))
    ranked = sorted(records, key=lambda r: (-r.alignment_score, r.id))
    for rec in ranked[:finetune_n]:
        rec.split = "finetune"
    rest = sorted(ranked[finetune_n:], key=lambda r: r.id)
    rng = np.random.default_rng(seed)
    bench_idx = set(rng.choice(len(rest), size=bench_n, replace=False).tolist()) if bench_n else set()
    for i, rec in enumerate(rest):
        rec.split = "bench_candidate" if i in bench_idx else "pretrain"
    return ranked


def finalize_bench(records: tp.Sequence[MediaRecord], expert_scores: tp.Mapping[str, float],
                   n: int) -> tp.List[MediaRecord]:
    """Promote the ``n`` best expert-rated benchmark candidates to the ``bench`` split.

    Candidates without an expert score, or outside the top ``n``, become
    ``bench_rejected``. Ties are broken by ascending id.
    """
    candidates = [r for r in records if r.split in ("bench_candidate", "bench", "bench_rejected")]
    scored = sorted((r for r in candidates if r.id in expert_scores),
                    key=lambda r: (-float(expert_scores[r.id]), r.id))
    chosen = {r.id for r in scored[:n]}
    for r in candidates:
        r.split = "bench" if r.id in chosen else "bench_rejected"
    return [r for r in candidates if r.id in chosen]
