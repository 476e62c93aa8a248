import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import reference as ref
from videomusic.decoder import DecoderConfig, TokenDecoder, sample_topk
from videomusic.errors import ConfigError, NumericError
from videomusic.tokens import PATTERNS, TokenMatrix, n_steps, step_index


def make_decoder(K=3, V=11, dim=32, layers=2, heads=4, pattern="delay", seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    dec = TokenDecoder(DecoderConfig(n_codebooks=K, cardinality=V, dim=dim, layers=layers, heads=heads,
                                     pattern=pattern)).to(dtype)
    return dec.eval()


def random_cond(rng, rows=6, dim=32):
    return torch.as_tensor(rng.standard_normal((rows, dim)))


def naive_generate(dec, cond, T, pattern, top_k, temperature, rng, prompt=None):
    """Generation by re-running the full forward pass at every step; no cache."""
    K, V = dec.K, dec.V
    steps = step_index(pattern, K, T)
    L = n_steps(pattern, K, T)
    grid = np.full((K, L), V, dtype=np.int64)
    todo = np.zeros((K, L), bool)
    todo[np.arange(K)[:, None], steps] = True
    forced = np.zeros((K, L), bool)
    if prompt is not None:
        P = prompt.shape[1]
        grid[np.arange(K)[:, None], steps[:, :P]] = prompt
        forced[np.arange(K)[:, None], steps[:, :P]] = True
    with torch.no_grad():
        for t in range(L):
            logits = dec.step_logits(torch.as_tensor(grid), cond)[:, t].numpy()
            for k in range(K):
                if todo[k, t] and not forced[k, t]:
                    row = logits[k].copy()
                    row[V] = -np.inf
                    grid[k, t] = sample_topk(row, top_k, temperature, rng)
    return grid[np.arange(K)[:, None], steps]


def test_step_logits_match_loop_reference(rng):
    dec = make_decoder(K=2, V=7, dim=32, layers=2)
    grid = rng.integers(0, 8, size=(2, 6))
    cond = random_cond(rng, 5)
    with torch.no_grad():
        got = dec.step_logits(torch.as_tensor(grid), cond).numpy()
    want = ref.decoder_step_logits(grid, cond.numpy(), dec)
    np.testing.assert_allclose(got, want, atol=1e-5, rtol=0)


def test_float32_forward_close_to_reference(rng):
    dec = make_decoder(K=2, V=7, dtype=torch.float32)
    grid = rng.integers(0, 8, size=(2, 5))
    cond = random_cond(rng, 4)
    with torch.no_grad():
        got = dec.step_logits(torch.as_tensor(grid), cond.float()).numpy()
    np.testing.assert_allclose(got, ref.decoder_step_logits(grid, cond.numpy(), dec), atol=1e-4)


def test_forward_shape_and_cell_mapping(rng):
    for pattern in PATTERNS:
        dec = make_decoder(K=3, V=11, pattern=pattern)
        tokens = torch.as_tensor(rng.integers(0, 11, size=(2, 3, 7)))
        cond = random_cond(rng).expand(2, -1, -1)
        with torch.no_grad():
            logits = dec(tokens, cond)
            steps = dec.step_logits(dec.interleave_batch(tokens), cond)
        assert logits.shape == (2, 3, 7, 12)
        idx = step_index(pattern, 3, 7)
        for k in range(3):
            for s in range(7):
                assert torch.equal(logits[:, k, s], steps[:, k, idx[k, s]])


def causality_trial(dec, rng, pattern, K, S, V):
    """Perturb every cell emitted after step t and check logits at steps <= t."""
    tokens = rng.integers(0, V, size=(K, S))
    cond = random_cond(rng, 4, dec.config.dim)
    idx = step_index(pattern, K, S)
    t = int(rng.integers(0, idx.max() + 1))
    other = tokens.copy()
    later = idx > t
    other[later] = rng.integers(0, V, size=int(later.sum()))
    with torch.no_grad():
        a = dec(torch.as_tensor(tokens), cond, pattern).numpy()
        b = dec(torch.as_tensor(other), cond, pattern).numpy()
    keep = idx <= t
    return float(np.abs(a[keep] - b[keep]).max())


def test_causality_all_patterns(rng):
    for pattern in PATTERNS:
        dec = make_decoder(K=3, V=9, pattern=pattern, seed=1)
        for _ in range(10):
            assert causality_trial(dec, rng, pattern, 3, 6, 9) <= 1e-6


def test_step_zero_depends_only_on_conditioning(rng):
    dec = make_decoder()
    cond = random_cond(rng)
    with torch.no_grad():
        a = dec.step_logits(torch.as_tensor(rng.integers(0, 11, (3, 5))), cond)[:, 0]
        b = dec.step_logits(torch.as_tensor(rng.integers(0, 11, (3, 5))), cond)[:, 0]
        c = dec.step_logits(torch.as_tensor(rng.integers(0, 11, (3, 5))), cond + 1)[:, 0]
    assert torch.allclose(a, b, atol=1e-12)
    assert not torch.allclose(a, c)


def test_conditioning_width_mismatch(rng):
    dec = make_decoder()
    with pytest.raises(ConfigError):
        dec(torch.zeros(3, 4, dtype=torch.long), torch.zeros(5, 16, dtype=torch.float64))
    with pytest.raises(ConfigError):
        dec.generate(torch.zeros(5, 16, dtype=torch.float64), 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        DecoderConfig(pattern="spiral").validate()
    with pytest.raises(ConfigError):
        DecoderConfig(dim=30, heads=4).validate()


def test_sample_topk_frequencies():
    # top-3 of [0, ln2, ln4, -10] renormalize to 1/7, 2/7, 4/7
    logits = np.array([0.0, math.log(2), math.log(4), -10.0])
    g = np.random.default_rng(7)
    n = 100_000
    counts = np.bincount([sample_topk(logits, 3, 1.0, g) for _ in range(n)], minlength=4)
    assert counts[3] == 0
    for i, p in enumerate([1 / 7, 2 / 7, 4 / 7]):
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[i] - n * p) <= 3 * sigma


def test_sample_topk_temperature():
    # T = 2 halves the log-odds: weights 1, sqrt2, 2
    logits = np.array([0.0, math.log(2), math.log(4)])
    g = np.random.default_rng(3)
    n = 60_000
    counts = np.bincount([sample_topk(logits, 3, 2.0, g) for _ in range(n)], minlength=3)
    w = np.array([1, math.sqrt(2), 2])
    p = w / w.sum()
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.integers(0, 2 ** 16))
def test_sample_topk_greedy_and_support(logits, seed):
    logits = np.array(logits)
    assert sample_topk(logits, 1, 1.0, seed) == int(np.argsort(-logits, kind="stable")[0])
    k = min(3, len(logits))
    allowed = set(np.argsort(-logits, kind="stable")[:k].tolist())
    assert sample_topk(logits, k, 0.7, seed) in allowed


def test_sample_topk_errors():
    with pytest.raises(NumericError):
        sample_topk(np.full(4, -np.inf), 2)
    with pytest.raises(ConfigError):
        sample_topk(np.zeros(4), 0)
    with pytest.raises(ConfigError):
        sample_topk(np.zeros(4), 2, temperature=0)


def test_sample_topk_defaults():
    assert sample_topk.__defaults__[:2] == (250, 1.0)


def test_generate_deterministic_and_valid(rng):
    dec = make_decoder(K=4, V=11, pattern="delay")
    cond = random_cond(rng)
    a = dec.generate(cond, 12, top_k=5, seed=42)
    b = dec.generate(cond, 12, top_k=5, seed=42)
    assert a == b
    assert a.tokens.shape == (4, 12)
    assert a.tokens.max() < 11


def test_generate_matches_naive_reforward(rng):
    for pattern in PATTERNS:
        dec = make_decoder(K=3, V=9, pattern=pattern, seed=2)
        cond = random_cond(rng, 5)
        got = dec.generate(cond, 6, top_k=4, temperature=1.3, seed=11)
        want = naive_generate(dec, cond, 6, pattern, 4, 1.3, np.random.default_rng(11))
        np.testing.assert_array_equal(got.tokens, want)


def test_greedy_single_step_is_argmax(rng):
    dec = make_decoder(K=2, V=9, pattern="parallel")
    cond = random_cond(rng)
    out = dec.generate(cond, 1, top_k=1, seed=None)
    with torch.no_grad():
        logits = dec.step_logits(torch.full((2, 1), 9), cond)[:, 0].numpy()
    np.testing.assert_array_equal(out.tokens[:, 0], logits[:, :9].argmax(-1))


def test_prompt_equals_forced_prefix(rng):
    for pattern in PATTERNS:
        dec = make_decoder(K=3, V=9, pattern=pattern, seed=4)
        cond = random_cond(rng, 5)
        prompt = rng.integers(0, 9, size=(3, 8))
        got = dec.generate(cond, 8, top_k=5, seed=5, prompt=TokenMatrix(prompt, 9))
        want = naive_generate(dec, cond, 16, pattern, 5, 1.0, np.random.default_rng(5), prompt=prompt)
        assert got.tokens.shape == (3, 16)
        np.testing.assert_array_equal(got.tokens[:, :8], prompt)
        np.testing.assert_array_equal(got.tokens, want)


def test_prompt_shape_checked(rng):
    dec = make_decoder(K=3, V=9)
    with pytest.raises(ConfigError):
        dec.generate(random_cond(rng), 2, prompt=TokenMatrix(np.zeros((2, 4), int), 9))
    with pytest.raises(ConfigError):
        dec.generate(random_cond(rng), 0)
