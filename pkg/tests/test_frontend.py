import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gray_ramp_frames, noise_frames, write_video
from videomusic.errors import ConfigError, DecodeError
from videomusic.frontend import (FrameFeatures, StubFrameEncoder, VideoClip, default_n_long, encode_frames,
                                 even_indices, sample_frames, select_long_short)


def reference_stub_encoding(frame, enc):
    """Loop-based recomputation of the stub encoder definition for one C x H x W frame."""
    C, H, W = frame.shape
    g = enc.grid
    tokens = []
    for i in range(g):
        for j in range(g):
            r0, r1 = (i * H) // g, ((i + 1) * H) // g
            c0, c1 = (j * W) // g, ((j + 1) * W) // g
            pooled = [frame[c, r0:r1, c0:c1].sum() / ((r1 - r0) * (c1 - c0)) for c in range(C)]
            tokens.append(np.array(pooled) @ enc.weight.astype(np.float64) + enc.bias)
    patches = np.array(tokens)
    return np.vstack([patches.mean(axis=0, keepdims=True), patches])


def test_even_indices_n10_select5():
    # i * 9 / 4 = 0, 2.25, 4.5, 6.75, 9 -> 4.5 rounds to the even 4
    assert even_indices(10, 5).tolist() == [0, 2, 4, 7, 9]


def test_even_indices_identity():
    assert even_indices(6, 6).tolist() == list(range(6))
    assert even_indices(7, 1).tolist() == [0]


@given(st.integers(2, 400), st.data())
def test_even_indices_properties(n_total, data):
    n = data.draw(st.integers(2, n_total))
    idx = even_indices(n_total, n)
    assert idx[0] == 0 and idx[-1] == n_total - 1
    assert np.all(np.diff(idx) >= 1)
    expected = np.array([round(i * (n_total - 1) / (n - 1)) for i in range(n)])
    # python round is half-to-even, same rule; float error only matters far from halves
    assert np.max(np.abs(idx - expected)) <= 1


def test_even_indices_out_of_range():
    with pytest.raises(IndexError):
        even_indices(5, 6)
    with pytest.raises(IndexError):
        even_indices(5, 0)


def test_default_n_long_caps_at_64():
    assert default_n_long(60) == 60
    assert default_n_long(1200) == 64


def test_sample_frames_timestamps(tmp_path):
    # 10 s at 10 native fps, frame i has gray level 2 i
    path = write_video(tmp_path / "ramp.avi", gray_ramp_frames(100, step=2), fps=10)
    clip = sample_frames(path, fps=4)
    assert clip.n_frames == 40
    assert clip.frames.shape[1:] == (3, 32, 32)
    expected = np.array([2 * ((10 * k) // 4) for k in range(40)]) / 255.0
    got = clip.frames.mean(axis=(1, 2, 3))
    assert np.max(np.abs(got - expected)) < 2.5 / 255


def test_sample_frames_default_operating_point(tmp_path):
    path = write_video(tmp_path / "thirty.avi", gray_ramp_frames(150, size=16), fps=5)
    clip = sample_frames(path, fps=2)
    assert clip.n_frames == 60
    assert clip.duration_s == pytest.approx(30.0)
    assert abs(clip.n_frames - round(clip.fps * clip.duration_s)) <= 1


def test_sample_frames_single_frame_and_truncation(tmp_path):
    path = write_video(tmp_path / "one.avi", gray_ramp_frames(8, size=16), fps=8)
    assert sample_frames(path, fps=1).n_frames == 1
    long = write_video(tmp_path / "long.avi", gray_ramp_frames(80, size=16), fps=8)
    assert sample_frames(long, fps=2, max_duration_s=3).n_frames == 6


def test_sample_frames_deterministic(tmp_path):
    path = write_video(tmp_path / "noise.avi", noise_frames(20), fps=10)
    a, b = sample_frames(path, 2), sample_frames(path, 2)
    np.testing.assert_array_equal(a.frames, b.frames)
    assert a.frames.min() >= 0 and a.frames.max() <= 1


def test_sample_frames_errors(tmp_path):
    with pytest.raises(DecodeError):
        sample_frames(tmp_path / "missing.mp4")
    bad = tmp_path / "bad.avi"
    bad.write_bytes(b"not a video")
    with pytest.raises(DecodeError):
        sample_frames(bad)
    with pytest.raises(ConfigError):
        sample_frames(bad, fps=0)


def test_encode_frames_shape_and_reference(rng):
    enc = StubFrameEncoder(grid=2, dim=16, seed=3)
    frames = rng.random((8, 3, 13, 11)).astype(np.float32)
    feats = encode_frames(VideoClip(frames, fps=2, duration_s=4), enc)
    assert feats.values.shape == (8, 5, 16)
    for n in range(8):
        np.testing.assert_allclose(feats.values[n], reference_stub_encoding(frames[n].astype(np.float64), enc),
                                   rtol=1e-5, atol=1e-5)


def test_encode_frames_identical_frames_and_batching(rng):
    enc = StubFrameEncoder()
    frame = rng.random((1, 3, 8, 8))
    clip = VideoClip(np.repeat(frame, 5, axis=0), fps=1, duration_s=5)
    feats = encode_frames(clip, enc, batch_size=2)
    for n in range(1, 5):
        np.testing.assert_array_equal(feats.values[n], feats.values[0])


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(6))), st.integers(0, 2 ** 16))
def test_encode_frames_permutation_equivariant(perm, seed):
    frames = np.random.default_rng(seed).random((6, 3, 8, 8)).astype(np.float32)
    enc = StubFrameEncoder()
    base = encode_frames(VideoClip(frames, 1, 6), enc).values
    permuted = encode_frames(VideoClip(frames[perm], 1, 6), enc).values
    np.testing.assert_array_equal(permuted, base[perm])


def test_encoder_dimension_mismatch():
    class Liar:
        tokens_per_frame, dim = 5, 16

        def __call__(self, frames):
            return np.zeros((len(frames), 4, 16))

    with pytest.raises(ConfigError):
        encode_frames(VideoClip(np.zeros((2, 3, 4, 4)), 1, 2), Liar())
    with pytest.raises(ConfigError):
        StubFrameEncoder(channels=3)(np.zeros((2, 1, 4, 4)))


def test_select_long_short_examples(rng):
    values = rng.standard_normal((60, 5, 4)).astype(np.float32)
    feats = FrameFeatures(values, fps=2)
    long, short = select_long_short(feats, 5, 10, 20)
    np.testing.assert_array_equal(short, values[20:30])
    np.testing.assert_array_equal(long, values[even_indices(60, 5)])
    full, _ = select_long_short(feats, 60, 1, 0)
    np.testing.assert_array_equal(full, values)
    with pytest.raises(IndexError):
        select_long_short(feats, 5, 10, 55)
    with pytest.raises(IndexError):
        select_long_short(feats, 61, 1, 0)


def test_frame_features_reject_non_finite():
    v = np.zeros((2, 5, 4))
    v[1, 2, 3] = np.nan
    with pytest.raises(ConfigError):
        FrameFeatures(v, fps=2)
