"""Objective evaluation metrics for generated music.

All metrics are extractor-agnostic: they operate on embedding matrices or
class-probability matrices produced by whatever adapter the caller uses.
"""

from __future__ import annotations

import csv
import json
import os
import typing as tp
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .errors import ConfigError, DataError, NumericError, PairingError

EIG_FLOOR = 1e-10
KL_EPS = 1e-10
DEFAULT_K = 5

METRIC_COLUMNS = ("kl", "fd", "fad", "density", "coverage", "imagebind")
METRIC_DIRECTIONS = {"kl": "lower", "fd": "lower", "fad": "lower",
                     "density": "higher", "coverage": "higher", "imagebind": "higher"}


def _embeddings(x, name: str, min_rows: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"{name} embeddings must be n x d, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise DataError(f"{name} needs at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} embeddings contain non-finite values")
    return x


def _floor(w: np.ndarray) -> np.ndarray:
    # eigenvalues under the floor are rounding noise of a PSD matrix
    return np.where(w > EIG_FLOOR, w, 0.0)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if not np.all(np.isfinite(w)):
        raise NumericError("eigendecomposition failed in Frechet distance")
    return (v * np.sqrt(_floor(w))) @ v.T


def frechet_from_stats(mu1, sigma1, mu2, sigma2) -> float:
    """Frechet distance between two Gaussians.

    ``Tr((S1 S2)^(1/2))`` is evaluated as ``Tr((S1^(1/2) S2 S1^(1/2))^(1/2))``,
    which only needs symmetric eigendecompositions. Eigenvalues below 1e-10
    count as zero and the trace term is clamped at 0.
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise DataError(f"dimension mismatch: {mu1.shape} vs {mu2.shape}")
    root1 = _psd_sqrt(sigma1)
    middle = root1 @ sigma2 @ root1
    w = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    tr_cross = np.sum(np.sqrt(_floor(w)))
    diff = mu1 - mu2
    trace_term = max(np.trace(sigma1) + np.trace(sigma2) - 2 * tr_cross, 0.0)
    return float(diff @ diff + trace_term)


def frechet(gen, ref) -> float:
    """Frechet distance between Gaussian fits (sample mean, unbiased covariance) of two sets."""
    gen = _embeddings(gen, "generated", 2)
    ref = _embeddings(ref, "reference", 2)
    if gen.shape[1] != ref.shape[1]:
        raise DataError(f"embedding widths differ: {gen.shape[1]} vs {ref.shape[1]}")
    return frechet_from_stats(gen.mean(0), np.cov(gen, rowvar=False, ddof=1),
                              ref.mean(0), np.cov(ref, rowvar=False, ddof=1))


def _simplex(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise DataError(f"{name} predictions must be n x c, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(1) - 1) > 1e-6):
        raise DataError(f"{name} rows must be probability vectors")
    return p


def prediction_kl(gen, ref, pairing: tp.Optional[tp.Sequence[tp.Tuple[int, int]]] = None) -> float:
    """Mean over paired clips of ``KL(reference || generated)``.

    Probabilities are floored at 1e-10 before taking logs. Without
    ``pairing``, row ``i`` of ``gen`` is paired with row ``i`` of ``ref``;
    otherwise ``pairing`` lists ``(gen_row, ref_row)`` index pairs.
    """
    gen, ref = _simplex(gen, "generated"), _simplex(ref, "reference")
    if gen.shape[1] != ref.shape[1]:
        raise PairingError(f"class counts differ: {gen.shape[1]} vs {ref.shape[1]}")
    if pairing is None:
        if gen.shape[0] != ref.shape[0]:
            raise PairingError(f"{gen.shape[0]} generated rows vs {ref.shape[0]} reference rows")
        gi = ri = np.arange(gen.shape[0])
    else:
        pairs = np.asarray(pairing, dtype=int).reshape(-1, 2)
        gi, ri = pairs[:, 0], pairs[:, 1]
        if np.any(gi >= gen.shape[0]) or np.any(ri >= ref.shape[0]) or np.any(pairs < 0):
            raise PairingError("pairing refers to rows that do not exist")
    if len(gi) == 0:
        raise PairingError("no pairs to compare")
    p = np.maximum(ref[ri], KL_EPS)
    q = np.maximum(gen[gi], KL_EPS)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=1)))


def density_coverage(gen, ref, k: int = DEFAULT_K) -> tp.Tuple[float, float]:
    """k-NN manifold density and coverage of ``gen`` with respect to ``ref``.

    ``r_i`` is the distance from ``ref_i`` to its k-th nearest other
    reference point. A generated point lies in ball ``i`` when its distance
    to ``ref_i`` is strictly below ``r_i``. Density counts memberships
    divided by ``k * n_gen``; coverage is the fraction of balls holding at
    least one generated point.
    """
    gen = _embeddings(gen, "generated")
    ref = _embeddings(ref, "reference")
    if k < 1 or k >= ref.shape[0]:
        raise ConfigError(f"need 1 <= k < n_ref = {ref.shape[0]}, got k={k}")
    radii = np.sort(cdist(ref, ref), axis=1)[:, k]
    inside = cdist(ref, gen) < radii[:, None]
    density = inside.sum() / (k * gen.shape[0])
    coverage = inside.any(axis=1).mean()
    return float(density), float(coverage)


def alignment_score(audio_emb, video_emb) -> float:
    """Mean cosine similarity between paired audio and video embeddings."""
    a = _embeddings(audio_emb, "audio")
    v = _embeddings(video_emb, "video")
    if a.shape != v.shape:
        raise PairingError(f"audio {a.shape} and video {v.shape} embeddings are not row-paired")
    na, nv = np.linalg.norm(a, axis=1), np.linalg.norm(v, axis=1)
    if np.any(na == 0) or np.any(nv == 0):
        raise NumericError("zero-norm embedding row; cosine similarity undefined")
    return float(np.clip(np.mean(np.sum(a * v, axis=1) / (na * nv)), -1.0, 1.0))


def average_rank(table, directions: tp.Sequence[str]) -> np.ndarray:
    """Per-method mean rank over metrics (1 = best); ties share their mean rank.

    Args:
        table: methods x metrics values.
        directions: per metric, ``"lower"`` or ``"higher"`` is better.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < 2:
        raise DataError("average rank needs a 2-D table with at least two methods")
    if len(directions) != table.shape[1]:
        raise DataError(f"{len(directions)} directions for {table.shape[1]} metrics")
    if np.isnan(table).any():
        raise DataError("table contains NaN cells")
    ranks = np.empty_like(table)
    for j, direction in enumerate(directions):
        if direction not in ("lower", "higher"):
            raise ConfigError(f"direction must be 'lower' or 'higher', got {direction!r}")
        col = table[:, j] if direction == "lower" else -table[:, j]
        ranks[:, j] = rankdata(col, method="average")
    return ranks.mean(axis=1)


@dataclass
class MetricReport:
    method: str
    kl: tp.Optional[float] = None
    fd: tp.Optional[float] = None
    fad: tp.Optional[float] = None
    density: tp.Optional[float] = None
    coverage: tp.Optional[float] = None
    imagebind: tp.Optional[float] = None
    ar: tp.Optional[float] = None
    n_pairs: int = 0
    notes: tp.List[str] = field(default_factory=list)

    def row(self) -> dict:
        return {name: getattr(self, name) for name in ("method",) + METRIC_COLUMNS + ("ar", "n_pairs")}


def attach_average_rank(reports: tp.Sequence[MetricReport]) -> tp.Optional[np.ndarray]:
    """Fill ``ar`` on every report using the metric columns all of them have."""
    if len(reports) < 2:
        return None
    cols = [c for c in METRIC_COLUMNS if all(getattr(r, c) is not None for r in reports)]
    if not cols:
        return None
    table = np.array([[getattr(r, c) for c in cols] for r in reports])
    ar = average_rank(table, [METRIC_DIRECTIONS[c] for c in cols])
    for r, value in zip(reports, ar):
        r.ar = float(value)
    return ar


def write_report(reports: tp.Sequence[MetricReport], csv_path: tp.Union[str, os.PathLike],
                 json_path: tp.Union[str, os.PathLike], unpaired: tp.Sequence[str] = ()) -> None:
    """Emit one CSV row and one JSON object per method; missing values are ``N/A`` in CSV."""
    fields = ["method", *METRIC_COLUMNS, "ar", "n_pairs"]
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in reports:
            writer.writerow({k: ("N/A" if v is None else (f"{v:.6f}" if isinstance(v, float) else v))
                             for k, v in r.row().items()})
    doc = {"methods": [asdict(r) for r in reports], "unpaired": list(unpaired),
           "columns": list(METRIC_COLUMNS), "directions": METRIC_DIRECTIONS}
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=2)
