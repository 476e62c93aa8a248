"""Waveform <-> token interface and a deterministic stub codec."""

from __future__ import annotations

import os
import typing as tp
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DecodeError, FormatError, NumericError
from .tokens import TokenMatrix

DEFAULT_SAMPLE_RATE = 32000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ConfigError(f"waveform must be mono (1-D), got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("waveform contains NaN or Inf")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise NumericError("waveform samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


class Codec(tp.Protocol):
    """Adapter contract for neural or stub codecs."""

    sample_rate: int
    frame_rate: float
    n_codebooks: int
    cardinality: int

    def encode(self, wave: Waveform) -> TokenMatrix: ...

    def decode(self, tokens: TokenMatrix) -> Waveform: ...


class StubCodec:
    """Per-frame mu-law codec over quadrature sub-band coefficients.

    The codec owns ``K / 2`` bands with center frequencies ``band_freqs``.
    Within each frame (``sample_rate / frame_rate`` samples) the signal is
    fitted by least squares with one ``sin`` and one ``cos`` of every band
    center, referenced to absolute time so a steady tone gives steady tokens.
    Codebook ``2b`` carries the sine coefficient of band ``b`` and codebook
    ``2b + 1`` the cosine one. Each coefficient is scaled by the largest value
    that keeps decoded audio inside ``[-1, 1]``, mu-law companded and
    quantized to ``V`` levels (``V`` odd so that zero is a level).

    Signals made of band-center tones are reproduced up to quantization
    noise; everything else is projected onto that span.
    """

    def __init__(self, sample_rate: int = DEFAULT_SAMPLE_RATE, frame_rate: float = 50,
                 n_codebooks: int = 4, cardinality: int = 255, mu: float = 255.0,
                 band_freqs: tp.Optional[tp.Sequence[float]] = None):
        if n_codebooks < 2 or n_codebooks % 2:
            raise ConfigError(f"stub codec needs an even codebook count >= 2, got {n_codebooks}")
        if cardinality < 3 or cardinality % 2 == 0:
            raise ConfigError(f"stub codec needs an odd cardinality >= 3, got {cardinality}")
        hop = sample_rate / frame_rate
        if abs(hop - round(hop)) > 1e-9:
            raise ConfigError(f"sample_rate / frame_rate must be an integer hop, got {hop}")
        n_bands = n_codebooks // 2
        if band_freqs is None:
            band_freqs = [220.0 * 2 ** b for b in range(n_bands)]
        band_freqs = np.asarray(band_freqs, dtype=np.float64)
        if band_freqs.shape != (n_bands,):
            raise ConfigError(f"need {n_bands} band frequencies, got {band_freqs.size}")
        if np.any(band_freqs <= 0) or np.any(band_freqs >= sample_rate / 2):
            raise ConfigError("band frequencies must lie strictly between 0 and Nyquist")
        self.sample_rate = int(sample_rate)
        self.frame_rate = float(frame_rate)
        self.n_codebooks = n_codebooks
        self.cardinality = cardinality
        self.mu = float(mu)
        self.band_freqs = band_freqs
        self.hop = int(round(hop))
        self.coef_scale = 1.0 / (np.sqrt(2.0) * n_bands)
        tau = np.arange(self.hop) / self.sample_rate
        self._local_basis = self._basis(tau)
        self._local_pinv = np.linalg.pinv(self._local_basis)

    @property
    def zero_token(self) -> int:
        return (self.cardinality - 1) // 2

    def _basis(self, t: np.ndarray) -> np.ndarray:
        # columns: sin(band 0), cos(band 0), sin(band 1), ...
        w = 2 * np.pi * self.band_freqs
        out = np.empty((t.size, self.n_codebooks))
        out[:, 0::2] = np.sin(np.outer(t, w))
        out[:, 1::2] = np.cos(np.outer(t, w))
        return out

    def _to_absolute(self, local: np.ndarray, t0: np.ndarray) -> np.ndarray:
        # local coefficients use time measured from the frame start t0
        w = 2 * np.pi * self.band_freqs
        c, s = np.cos(np.outer(t0, w)), np.sin(np.outer(t0, w))
        a, b = local[:, 0::2], local[:, 1::2]
        out = np.empty_like(local)
        out[:, 0::2] = a * c + b * s
        out[:, 1::2] = b * c - a * s
        return out

    def _to_local(self, absolute: np.ndarray, t0: np.ndarray) -> np.ndarray:
        w = 2 * np.pi * self.band_freqs
        c, s = np.cos(np.outer(t0, w)), np.sin(np.outer(t0, w))
        A, B = absolute[:, 0::2], absolute[:, 1::2]
        out = np.empty_like(absolute)
        out[:, 0::2] = A * c - B * s
        out[:, 1::2] = A * s + B * c
        return out

    def quantize(self, coef: np.ndarray) -> np.ndarray:
        u = np.clip(coef / self.coef_scale, -1.0, 1.0)
        m = np.sign(u) * np.log1p(self.mu * np.abs(u)) / np.log1p(self.mu)
        return np.rint((m + 1.0) * (self.cardinality - 1) / 2).astype(np.int64)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        m = 2.0 * codes / (self.cardinality - 1) - 1.0
        u = np.sign(m) * np.expm1(np.abs(m) * np.log1p(self.mu)) / self.mu
        return u * self.coef_scale

    def n_frames(self, n_samples: int) -> int:
        return int(round(n_samples / self.hop))

    def encode(self, wave: Waveform) -> TokenMatrix:
        if wave.sample_rate != self.sample_rate:
            raise ConfigError(f"codec runs at {self.sample_rate} Hz, waveform is {wave.sample_rate} Hz")
        x = wave.samples
        S = self.n_frames(x.size)
        if S < 1:
            raise ConfigError(f"waveform of {x.size} samples is shorter than half a codec frame")
        full = min(S, x.size // self.hop)
        local = np.zeros((S, self.n_codebooks))
        if full:
            frames = x[:full * self.hop].reshape(full, self.hop)
            local[:full] = frames @ self._local_pinv.T
        if full < S:
            tail = x[full * self.hop:]
            local[full] = np.linalg.lstsq(self._local_basis[:tail.size], tail, rcond=None)[0]
        t0 = np.arange(S) * self.hop / self.sample_rate
        coef = self._to_absolute(local, t0)
        return TokenMatrix(self.quantize(coef).T, self.cardinality)

    def decode(self, tokens: TokenMatrix) -> Waveform:
        if tokens.K != self.n_codebooks:
            raise FormatError(f"codec has {self.n_codebooks} codebooks, tokens have {tokens.K}")
        if tokens.tokens.max() >= self.cardinality:
            raise FormatError(f"token ids must be < {self.cardinality} for decoding (filler present?)")
        coef = self.dequantize(tokens.tokens.T)
        t0 = np.arange(tokens.S) * self.hop / self.sample_rate
        local = self._to_local(coef, t0)
        samples = (local @ self._local_basis.T).ravel()
        return Waveform(np.clip(samples, -1.0, 1.0), self.sample_rate)


def codec_encode(wave: Waveform, codec: Codec) -> TokenMatrix:
    return codec.encode(wave)


def codec_decode(tokens: TokenMatrix, codec: Codec) -> Waveform:
    return codec.decode(tokens)


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    n = min(reference.size, estimate.size)
    noise = np.sum((reference[:n] - estimate[:n]) ** 2)
    signal = np.sum(reference[:n] ** 2)
    if noise == 0:
        return float("inf")
    return float(10 * np.log10(signal / noise))


def write_wav(path: tp.Union[str, os.PathLike], wave: Waveform) -> None:
    """Write 16-bit PCM mono."""
    from scipy.io import wavfile

    pcm = np.round(np.clip(wave.samples, -1.0, 1.0) * 32767).astype(np.int16)
    wavfile.write(os.fspath(path), wave.sample_rate, pcm)


def read_wav(path: tp.Union[str, os.PathLike]) -> Waveform:
    """Read a WAV file as mono float samples (channels are averaged)."""
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(os.fspath(path))
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot read audio {path}: {exc}") from exc
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return Waveform(np.clip(data, -1.0, 1.0), int(rate))
