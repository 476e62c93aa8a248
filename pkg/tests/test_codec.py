import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tone
from videomusic.codec import StubCodec, Waveform, codec_decode, codec_encode, read_wav, snr_db, write_wav
from videomusic.errors import ConfigError, DecodeError, FormatError, NumericError
from videomusic.tokens import TokenMatrix


def loop_quantizer(x, codec):
    """Per-frame least squares against absolute-time sines and cosines, then scalar mu-law."""
    hop, sr, V, mu = codec.hop, codec.sample_rate, codec.cardinality, codec.mu
    S = int(round(x.size / hop))
    out = np.zeros((codec.n_codebooks, S), dtype=np.int64)
    for s in range(S):
        seg = x[s * hop:(s + 1) * hop]
        t = (s * hop + np.arange(seg.size)) / sr
        cols = []
        for f in codec.band_freqs:
            cols += [np.sin(2 * math.pi * f * t), np.cos(2 * math.pi * f * t)]
        coef = np.linalg.lstsq(np.stack(cols, 1), seg, rcond=None)[0]
        for k, c in enumerate(coef):
            u = min(max(c / codec.coef_scale, -1.0), 1.0)
            m = math.copysign(math.log1p(mu * abs(u)) / math.log1p(mu), u)
            out[k, s] = int(np.rint((m + 1) * (V - 1) / 2))
    return out


def test_shape_two_seconds():
    codec = StubCodec()
    y = codec_encode(Waveform(np.zeros(64000), 32000), codec)
    assert (y.K, y.S) == (4, 100)


def test_silence_encodes_to_zero_token():
    codec = StubCodec()
    y = codec.encode(Waveform(np.zeros(3200), 32000))
    assert np.all(y.tokens == codec.zero_token) and codec.zero_token == 127


def test_zero_tokens_decode_to_silence():
    codec = StubCodec()
    w = codec.decode(TokenMatrix(np.full((4, 20), codec.zero_token), 255))
    step = codec.dequantize(np.array([codec.zero_token + 1]))[0]
    assert np.all(np.abs(w.samples) < step)


def test_random_waveform_matches_loop_quantizer(rng):
    codec = StubCodec(sample_rate=8000, frame_rate=50, n_codebooks=4, cardinality=63)
    x = rng.uniform(-0.05, 0.05, 8000 * 2 + 37)
    got = codec.encode(Waveform(x, 8000)).tokens
    want = loop_quantizer(x, codec)
    # identical except where floating noise straddles a rounding boundary
    assert np.mean(got != want) < 1e-3
    assert np.max(np.abs(got - want)) <= 1


def test_tone_round_trip_snr():
    codec = StubCodec()
    a = tone(440.0, 2.0)
    assert snr_db(a.samples, codec_decode(codec_encode(a, codec), codec).samples) >= 20


def test_band_limited_mixture_snr():
    codec = StubCodec()
    t = np.arange(64000) / 32000
    x = 0.2 * np.sin(2 * np.pi * 220 * t + 0.3) + 0.15 * np.cos(2 * np.pi * 440 * t)
    back = codec.decode(codec.encode(Waveform(x, 32000))).samples
    assert snr_db(x, back) >= 20


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.sampled_from([(4, 255), (2, 31), (6, 101)]), st.integers(0, 2 ** 16))
def test_token_side_idempotence(S, kv, seed):
    K, V = kv
    codec = StubCodec(n_codebooks=K, cardinality=V)
    y = TokenMatrix(np.random.default_rng(seed).integers(0, V, (K, S)), V)
    assert codec.encode(codec.decode(y)) == y


@given(st.integers(1, 200))
def test_duration_consistency(S):
    codec = StubCodec()
    w = codec.decode(TokenMatrix(np.full((4, S), 127), 255))
    assert abs(w.duration_s - S / codec.frame_rate) < 1 / codec.sample_rate


def test_errors():
    codec = StubCodec()
    with pytest.raises(ConfigError):
        codec.encode(Waveform(np.zeros(1600), 16000))
    with pytest.raises(FormatError):
        codec.decode(TokenMatrix(np.full((4, 3), 255), 255))
    with pytest.raises(FormatError):
        codec.decode(TokenMatrix(np.zeros((2, 3), int), 255))
    with pytest.raises(ConfigError):
        StubCodec(cardinality=256)
    with pytest.raises(ConfigError):
        StubCodec(n_codebooks=3)
    with pytest.raises(ConfigError):
        StubCodec(sample_rate=32000, frame_rate=48)


def test_waveform_validation():
    with pytest.raises(NumericError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(NumericError):
        Waveform(np.array([0.0, 1.5]))
    with pytest.raises(ConfigError):
        Waveform(np.zeros((2, 2)))
    assert Waveform(np.zeros(32000)).duration_s == 1.0


def test_wav_io(tmp_path):
    a = tone(330.0, 0.5)
    write_wav(tmp_path / "a.wav", a)
    b = read_wav(tmp_path / "a.wav")
    assert b.sample_rate == 32000
    assert np.max(np.abs(a.samples - b.samples)) < 1 / 32767
    with pytest.raises(DecodeError):
        read_wav(tmp_path / "missing.wav")
    (tmp_path / "junk.wav").write_bytes(b"RIFF0000junk")
    with pytest.raises(DecodeError):
        read_wav(tmp_path / "junk.wav")


def test_stereo_is_averaged(tmp_path):
    from scipy.io import wavfile

    data = np.stack([np.full(100, 1000), np.full(100, 3000)], axis=1).astype(np.int16)
    wavfile.write(tmp_path / "st.wav", 32000, data)
    np.testing.assert_allclose(read_wav(tmp_path / "st.wav").samples, 2000 / 32767)
