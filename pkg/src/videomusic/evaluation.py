"""Evaluate generated audio against references and write the metric tables."""

from __future__ import annotations

import csv
import logging
import os
import typing as tp
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import Waveform, read_wav
from .errors import DataError, PairingError
from .extractors import (AudioEmbedder, AudioTagger, AVEmbedder, StubAudioEmbedder, StubAudioTagger,
                         StubAVEmbedder)
from .frontend import VideoClip, sample_frames
from .metrics import (DEFAULT_K, MetricReport, alignment_score, attach_average_rank, density_coverage,
                      frechet, prediction_kl, write_report)

logger = logging.getLogger(__name__)


@dataclass
class Extractors:
    fad: AudioEmbedder = field(default_factory=lambda: StubAudioEmbedder(dim=16, seed=0))
    fd: AudioEmbedder = field(default_factory=lambda: StubAudioEmbedder(dim=24, n_bands=48, seed=10))
    tagger: AudioTagger = field(default_factory=StubAudioTagger)
    av: AVEmbedder = field(default_factory=StubAVEmbedder)


def evaluate_method(name: str, generated: tp.Sequence[Waveform], reference: tp.Sequence[Waveform],
                    videos: tp.Optional[tp.Sequence[tp.Optional[VideoClip]]] = None,
                    extractors: tp.Optional[Extractors] = None, k: int = DEFAULT_K) -> MetricReport:
    """Compute the six metric columns for one method over row-paired clips.

    Metrics whose preconditions fail (fewer than two clips for the Frechet
    statistics, too few references for k-NN balls, no videos for the
    alignment score) are left as ``None`` with an explanatory note.
    """
    if len(generated) != len(reference):
        raise PairingError(f"{len(generated)} generated vs {len(reference)} reference clips")
    ex = extractors or Extractors()
    report = MetricReport(method=name, n_pairs=len(generated))
    if not generated:
        report.notes.append("no paired clips")
        return report

    report.kl = prediction_kl(np.stack([ex.tagger.predict(w) for w in generated]),
                              np.stack([ex.tagger.predict(w) for w in reference]))
    fd_gen = np.stack([ex.fd.embed(w) for w in generated])
    fd_ref = np.stack([ex.fd.embed(w) for w in reference])
    fad_gen = np.stack([ex.fad.embed(w) for w in generated])
    fad_ref = np.stack([ex.fad.embed(w) for w in reference])
    if len(generated) >= 2:
        report.fd = frechet(fd_gen, fd_ref)
        report.fad = frechet(fad_gen, fad_ref)
    else:
        report.notes.append("Frechet distances need at least 2 clips")
    k_eff = min(k, len(reference) - 1)
    if k_eff >= 1:
        report.density, report.coverage = density_coverage(fad_gen, fad_ref, k_eff)
        if k_eff != k:
            report.notes.append(f"density/coverage used k={k_eff}")
    else:
        report.notes.append("density/coverage need at least 2 reference clips")
    if videos is not None and all(v is not None for v in videos):
        report.imagebind = alignment_score(np.stack([ex.av.embed_audio(w) for w in generated]),
                                           np.stack([ex.av.embed_video(v) for v in videos]))
    else:
        report.notes.append("alignment score needs a video for every clip")
    return report


def read_pairs(path: tp.Union[str, os.PathLike]) -> tp.List[tp.Tuple[str, tp.Optional[str]]]:
    """Read a pairs CSV with a ``clip`` column and an optional ``video`` column."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "clip" not in reader.fieldnames:
            raise DataError(f"{path}: pairs file needs a 'clip' column")
        return [(row["clip"], row.get("video") or None) for row in reader]


def evaluate_dirs(pred_dir: tp.Union[str, os.PathLike], ref_dir: tp.Union[str, os.PathLike],
                  pairs_file: tp.Union[str, os.PathLike], out_prefix: tp.Union[str, os.PathLike],
                  extractors: tp.Optional[Extractors] = None, video_fps: float = 1.0,
                  k: int = DEFAULT_K) -> tp.List[MetricReport]:
    """Evaluate every method under ``pred_dir`` and write ``<out>.csv`` and ``<out>.json``.

    ``pred_dir`` holds one sub-directory per method, or the clips of a single
    method directly. Clip names come from the pairs file and must exist in
    ``ref_dir``; clips missing on either side are listed as unpaired and
    left out of every aggregate.
    """
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    pairs = read_pairs(pairs_file)
    subdirs = sorted(p for p in pred_dir.iterdir() if p.is_dir())
    methods = [(p.name, p) for p in subdirs] or [(pred_dir.name, pred_dir)]
    videos_cache: tp.Dict[str, VideoClip] = {}
    reports, unpaired = [], []
    for name, directory in methods:
        gen, ref, vids = [], [], []
        for clip, video in pairs:
            g, r = directory / clip, ref_dir / clip
            if not g.is_file() or not r.is_file():
                unpaired.append(f"{name}/{clip}")
                continue
            gen.append(read_wav(g))
            ref.append(read_wav(r))
            if video is None:
                vids.append(None)
            else:
                if video not in videos_cache:
                    vpath = Path(video) if os.path.isabs(video) else Path(pairs_file).parent / video
                    videos_cache[video] = sample_frames(vpath, video_fps)
                vids.append(videos_cache[video])
        reports.append(evaluate_method(name, gen, ref, vids, extractors, k))
    attach_average_rank(reports)
    out_prefix = str(out_prefix)
    base = out_prefix[:-5] if out_prefix.endswith(".json") else out_prefix[:-4] if out_prefix.endswith(".csv") else out_prefix
    write_report(reports, base + ".csv", base + ".json", unpaired)
    return reports
