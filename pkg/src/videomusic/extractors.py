"""Embedding and tagging adapters with deterministic offline stubs.

Real deployments plug pretrained networks (audio-tagging features,
contrastive audio features, joint audio-visual embedders, sound-event
taggers) in behind these protocols. The stubs derive everything from
log band energies and seeded random projections, so they need no weights
and give identical outputs across runs.
"""

from __future__ import annotations

import typing as tp

import numpy as np

from .codec import Waveform
from .errors import EmptyInputError
from .frontend import VideoClip


class AudioEmbedder(tp.Protocol):
    dim: int

    def embed(self, wave: Waveform) -> np.ndarray: ...


class AudioTagger(tp.Protocol):
    n_classes: int

    def predict(self, wave: Waveform) -> np.ndarray: ...


class MusicEventTagger(tp.Protocol):
    frame_rate: float

    def music_probs(self, wave: Waveform) -> np.ndarray: ...


class AVEmbedder(tp.Protocol):
    dim: int

    def embed_audio(self, wave: Waveform) -> np.ndarray: ...

    def embed_video(self, clip: VideoClip) -> np.ndarray: ...


def frame_spectra(samples: np.ndarray, frame: int = 1024, hop: tp.Optional[int] = None) -> np.ndarray:
    """Magnitude-squared spectra of Hann-windowed frames (``n_frames x frame // 2 + 1``)."""
    hop = hop or frame
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < frame:
        samples = np.pad(samples, (0, frame - samples.size))
    n = 1 + (samples.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return np.abs(np.fft.rfft(samples[idx] * np.hanning(frame), axis=1)) ** 2


def log_band_energies(wave: Waveform, n_bands: int = 32, frame: int = 1024,
                      fmin: float = 40.0) -> np.ndarray:
    """Time-averaged log energies in ``n_bands`` log-spaced frequency bands."""
    spec = frame_spectra(wave.samples, frame)
    freqs = np.fft.rfftfreq(frame, 1.0 / wave.sample_rate)
    edges = np.geomspace(fmin, wave.sample_rate / 2, n_bands + 1)
    band = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, n_bands - 1)
    energies = np.zeros((spec.shape[0], n_bands))
    for b in range(n_bands):
        sel = band == b
        if sel.any():
            energies[:, b] = spec[:, sel].sum(axis=1)
    return np.log(energies.mean(axis=0) + 1e-8)


class StubAudioEmbedder:
    """Seeded nonlinear projection of log band energies."""

    def __init__(self, dim: int = 16, n_bands: int = 32, seed: int = 0):
        self.dim = dim
        self.n_bands = n_bands
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((n_bands, dim)) / np.sqrt(n_bands)

    def embed(self, wave: Waveform) -> np.ndarray:
        return np.tanh(0.1 * log_band_energies(wave, self.n_bands) @ self.weight)


class StubAudioTagger:
    """Class probabilities as a softmax over projected log band energies."""

    def __init__(self, n_classes: int = 10, n_bands: int = 32, seed: int = 1):
        self.n_classes = n_classes
        self.n_bands = n_bands
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((n_bands, n_classes)) / np.sqrt(n_bands)

    def predict(self, wave: Waveform) -> np.ndarray:
        logits = 0.2 * log_band_energies(wave, self.n_bands) @ self.weight
        p = np.exp(logits - logits.max())
        return p / p.sum()


class StubMusicTagger:
    """Per-frame music probability from spectral energy concentration.

    The probability of frame ``i`` is the share of its energy held by the
    ``peak_bins`` strongest FFT bins: close to 1 for tonal frames, small for
    broadband noise and 0 for silence.
    """

    def __init__(self, frame: int = 1024, peak_bins: int = 8, sample_rate: int = 32000):
        self.frame = frame
        self.peak_bins = peak_bins
        self.frame_rate = sample_rate / frame

    def music_probs(self, wave: Waveform) -> np.ndarray:
        if wave.samples.size == 0:
            raise EmptyInputError("empty waveform")
        spec = frame_spectra(wave.samples, self.frame)
        total = spec.sum(axis=1)
        top = np.sort(spec, axis=1)[:, -self.peak_bins:].sum(axis=1)
        return np.where(total > 1e-12, top / np.maximum(total, 1e-300), 0.0)


class StubAVEmbedder:
    """Seeded projections of audio band energies and video color statistics into one space."""

    def __init__(self, dim: int = 16, n_bands: int = 16, seed: int = 2):
        self.dim = dim
        self.n_bands = n_bands
        rng = np.random.default_rng(seed)
        self.audio_weight = rng.standard_normal((n_bands, dim))
        self.video_weight = rng.standard_normal((6, dim))
        self.audio_bias = rng.standard_normal(dim)
        self.video_bias = rng.standard_normal(dim)

    def embed_audio(self, wave: Waveform) -> np.ndarray:
        e = log_band_energies(wave, self.n_bands)
        return np.tanh(0.05 * e @ self.audio_weight) + self.audio_bias

    def embed_video(self, clip: VideoClip) -> np.ndarray:
        frames = clip.frames
        stats = np.concatenate([frames.mean(axis=(0, 2, 3))[:3], frames.std(axis=(0, 2, 3))[:3]])
        stats = np.pad(stats, (0, 6 - stats.size))
        return np.tanh(stats @ self.video_weight) + self.video_bias
