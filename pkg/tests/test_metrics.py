import csv
import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import tone, write_video, noise_frames
from videomusic.codec import write_wav
from videomusic.errors import ConfigError, DataError, NumericError, PairingError
from videomusic.evaluation import evaluate_dirs
from videomusic.metrics import (MetricReport, alignment_score, attach_average_rank, average_rank,
                                density_coverage, frechet, frechet_from_stats, prediction_kl, write_report)


def sqrtm_frechet(a, b):
    """Frechet distance through the general (non-symmetric) matrix square root."""
    m1, m2 = a.mean(0), b.mean(0)
    s1, s2 = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    cross = scipy.linalg.sqrtm(np.atleast_2d(s1) @ np.atleast_2d(s2)).real
    return float(((m1 - m2) ** 2).sum() + np.trace(s1 + s2 - 2 * cross))


def brute_density_coverage(gen, ref, k):
    n_ref = len(ref)
    radii = []
    for i in range(n_ref):
        d = sorted(math.dist(ref[i], ref[j]) for j in range(n_ref))
        radii.append(d[k])  # d[0] is the point itself
    hits = 0
    covered = 0
    for i in range(n_ref):
        inside = [math.dist(g, ref[i]) < radii[i] for g in gen]
        hits += sum(inside)
        covered += any(inside)
    return hits / (k * len(gen)), covered / n_ref


def loop_kl(p, q):
    total = 0.0
    for prow, qrow in zip(p, q):
        for a, b in zip(prow, qrow):
            a, b = max(a, 1e-10), max(b, 1e-10)
            total += a * math.log(a / b)
    return total / len(p)


def test_frechet_same_set_is_zero(rng):
    x = rng.standard_normal((20, 4))
    assert abs(frechet(x, x)) <= 1e-6


def test_frechet_one_dimensional_closed_form():
    assert frechet_from_stats(0.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)
    # sample stats mu 0 and 1, unit variance
    a = np.array([-1.0, 1.0]) / math.sqrt(2)
    assert frechet(a, a + 1) == pytest.approx(1.0)


def test_frechet_matches_sqrtm_oracle(rng):
    a = rng.standard_normal((10, 3))
    b = rng.standard_normal((10, 3)) * 1.5 + 0.3
    assert frechet(a, b) == pytest.approx(sqrtm_frechet(a, b), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 16), st.integers(1, 6))
def test_frechet_symmetric_and_isometry_invariant(seed, d):
    g = np.random.default_rng(seed)
    a = g.standard_normal((12, d))
    b = g.standard_normal((15, d)) * 2 + 1
    assert abs(frechet(a, b) - frechet(b, a)) <= 1e-6
    assert frechet(a, b) >= 0
    q, _ = np.linalg.qr(g.standard_normal((d, d)))
    shift = g.standard_normal(d)
    assert abs(frechet(a @ q + shift, b @ q + shift) - frechet(a, b)) < 1e-5


def test_frechet_rank_deficient():
    # fewer points than dimensions gives singular covariances
    g = np.random.default_rng(0)
    a, b = g.standard_normal((3, 8)), g.standard_normal((3, 8))
    assert frechet(a, b) >= 0
    assert frechet(a, a) <= 1e-6


def test_frechet_errors():
    with pytest.raises(DataError):
        frechet(np.zeros((1, 3)), np.zeros((4, 3)))
    with pytest.raises(DataError):
        frechet(np.zeros((4, 3)), np.zeros((4, 2)))
    with pytest.raises(DataError):
        frechet(np.full((4, 2), np.nan), np.zeros((4, 2)))


def test_kl_examples(rng):
    p = rng.dirichlet(np.ones(5), size=7)
    assert prediction_kl(p, p) == 0.0
    assert prediction_kl([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(math.log(2), abs=1e-6)
    q = rng.dirichlet(np.ones(5), size=7)
    assert prediction_kl(q, p) == pytest.approx(loop_kl(p, q), rel=1e-12)
    assert prediction_kl(q, p) > 0


def test_kl_pairing():
    ref = np.array([[1.0, 0.0], [0.0, 1.0]])
    gen = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert prediction_kl(gen, ref, pairing=[(1, 0), (0, 1)]) == pytest.approx(0.0)
    with pytest.raises(PairingError):
        prediction_kl(gen, ref[:1])
    with pytest.raises(PairingError):
        prediction_kl(gen, ref, pairing=[(0, 5)])
    with pytest.raises(DataError):
        prediction_kl([[0.3, 0.3]], [[0.5, 0.5]])


def test_density_coverage_examples(rng):
    x = rng.standard_normal((12, 3))
    for k in (1, 3, 5):
        assert density_coverage(x, x, k)[1] == 1.0
    # duplicated reference point: every ball has radius 0
    ref = np.zeros((6, 2))
    assert density_coverage(rng.standard_normal((4, 2)) + 3, ref, 2) == (0.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 16), st.integers(6, 32), st.integers(1, 32), st.sampled_from([1, 3, 5]))
def test_density_coverage_brute_force(seed, n_ref, n_gen, k):
    g = np.random.default_rng(seed)
    ref = g.standard_normal((n_ref, 2))
    gen = g.standard_normal((n_gen, 2)) * 1.2
    assert density_coverage(gen, ref, k) == brute_density_coverage(gen.tolist(), ref.tolist(), k)


def test_density_coverage_k_checked():
    with pytest.raises(ConfigError):
        density_coverage(np.zeros((3, 2)), np.zeros((5, 2)), 5)


def test_alignment_examples():
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    assert alignment_score(a, a) == pytest.approx(1.0)
    assert alignment_score([[1.0, 0.0]], [[0.0, 2.0]]) == pytest.approx(0.0)
    assert alignment_score([[1.0, 0.0]], [[-2.0, 0.0]]) == pytest.approx(-1.0)
    with pytest.raises(NumericError):
        alignment_score([[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(PairingError):
        alignment_score(np.ones((2, 2)), np.ones((3, 2)))


def test_average_rank_examples():
    np.testing.assert_allclose(average_rank([[1.0, 9.0], [2.0, 3.0]], ["lower", "higher"]), [1.0, 2.0])
    np.testing.assert_allclose(average_rank(np.ones((4, 3)), ["lower"] * 3), [2.5] * 4)
    # hand ranks: metric 1 lower (a=1, b=2.5, c=2.5), metric 2 higher (c=1, a=2, b=3)
    np.testing.assert_allclose(average_rank([[0.1, 5.0], [0.2, 1.0], [0.2, 7.0]], ["lower", "higher"]),
                               [1.5, 2.75, 1.75])


def test_average_rank_errors():
    with pytest.raises(DataError):
        average_rank([[1.0, np.nan], [2.0, 3.0]], ["lower", "lower"])
    with pytest.raises(DataError):
        average_rank([[1.0, 2.0]], ["lower", "lower"])
    with pytest.raises(ConfigError):
        average_rank([[1.0], [2.0]], ["up"])


@given(st.integers(0, 2 ** 16))
def test_average_rank_depends_only_on_ranks(seed):
    g = np.random.default_rng(seed)
    table = g.integers(0, 4, size=(5, 3)).astype(float)
    dirs = ["lower", "higher", "lower"]
    warped = np.column_stack([np.exp(table[:, 0]), table[:, 1] ** 3 + 2, np.arctan(table[:, 2])])
    np.testing.assert_allclose(average_rank(table, dirs), average_rank(warped, dirs))


def test_write_report_marks_missing(tmp_path):
    reports = [MetricReport("a", kl=0.1, fd=1.0), MetricReport("b", kl=0.2, fd=0.5)]
    attach_average_rank(reports)
    write_report(reports, tmp_path / "r.csv", tmp_path / "r.json", unpaired=["b/x.wav"])
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert rows[0]["fad"] == "N/A" and rows[0]["ar"] == "1.500000"
    doc = json.load(open(tmp_path / "r.json"))
    assert doc["unpaired"] == ["b/x.wav"] and doc["methods"][1]["ar"] == 1.5


def make_clips(directory, n, seed=0, seconds=1.0):
    g = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        write_wav(directory / f"c{i}.wav", tone(g.uniform(150, 3000), seconds, amp=g.uniform(0.1, 0.5)))


def write_pairs(path, names, videos=None):
    with open(path, "w") as f:
        f.write("clip,video\n" if videos else "clip\n")
        for i, n in enumerate(names):
            f.write(f"{n},{videos[i]}\n" if videos else f"{n}\n")


def test_evaluate_same_dir_is_ground_truth(tmp_path):
    make_clips(tmp_path / "ref", 8)
    write_pairs(tmp_path / "pairs.csv", [f"c{i}.wav" for i in range(8)])
    (r,) = evaluate_dirs(tmp_path / "ref", tmp_path / "ref", tmp_path / "pairs.csv", tmp_path / "out")
    assert r.kl <= 1e-6 and r.fd <= 1e-4 and r.fad <= 1e-4 and r.coverage == 1.0
    assert r.imagebind is None and r.ar is None
    assert (tmp_path / "out.csv").exists() and (tmp_path / "out.json").exists()


def test_evaluate_single_clip_marks_na(tmp_path):
    make_clips(tmp_path / "ref", 1)
    make_clips(tmp_path / "pred", 1, seed=1)
    write_pairs(tmp_path / "pairs.csv", ["c0.wav"])
    (r,) = evaluate_dirs(tmp_path / "pred", tmp_path / "ref", tmp_path / "pairs.csv", tmp_path / "out.csv")
    assert r.fd is None and r.fad is None and r.kl is not None
    row = next(csv.DictReader(open(tmp_path / "out.csv")))
    assert row["fd"] == "N/A" and row["fad"] == "N/A"


def test_evaluate_methods_unpaired_and_video(tmp_path):
    make_clips(tmp_path / "ref", 6)
    make_clips(tmp_path / "pred" / "copy", 6)
    make_clips(tmp_path / "pred" / "other", 5, seed=3)
    write_video(tmp_path / "v.avi", noise_frames(4, seed=0), 2.0)
    names = [f"c{i}.wav" for i in range(6)]
    write_pairs(tmp_path / "pairs.csv", names, ["v.avi"] * 6)
    reports = evaluate_dirs(tmp_path / "pred", tmp_path / "ref", tmp_path / "pairs.csv", tmp_path / "out")
    copy, other = reports
    assert copy.method == "copy" and copy.n_pairs == 6 and other.n_pairs == 5
    assert -1 <= copy.imagebind <= 1
    assert copy.kl <= 1e-6 and copy.kl <= other.kl
    assert copy.ar is not None and copy.ar <= other.ar
    doc = json.load(open(tmp_path / "out.json"))
    assert doc["unpaired"] == ["other/c5.wav"]
