"""Stage-major curation driver with checkpoints, quarantine and resume.

Every per-record stage records a verdict in ``MediaRecord.stages`` and a
record that already carries a verdict for a stage is never re-processed.
That is what makes the pipeline idempotent on its own output and lets a
run resume from the last stage checkpoint. Relative media paths are
resolved against the directory of the manifest that references them.
"""

from __future__ import annotations

import json
import logging
import os
import typing as tp
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..codec import read_wav, write_wav
from ..errors import DataError, StageError, VideoMusicError
from ..extractors import AVEmbedder, MusicEventTagger, StubAVEmbedder, StubMusicTagger
from ..frontend import sample_frames
from .filters import (BandStopSeparator, Separator, av_alignment, coarse_filter, music_event_filter,
                      rank_and_split, separate_music, static_video_filter)
from .records import PASS, STAGES, FilterConfig, MediaRecord, Verdict, read_manifest, write_lines, write_manifest

logger = logging.getLogger(__name__)

PathLike = tp.Union[str, os.PathLike]


@dataclass
class Adapters:
    tagger: MusicEventTagger = field(default_factory=StubMusicTagger)
    separator: Separator = field(default_factory=BandStopSeparator)
    av_embedder: AVEmbedder = field(default_factory=StubAVEmbedder)


@dataclass
class PipelineResult:
    records: tp.List[MediaRecord]
    quarantined: tp.List[tp.Tuple[int, str, str]]
    resumed_from: tp.Optional[str] = None


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _rebase(path: tp.Optional[str], src: Path, dst: Path) -> tp.Optional[str]:
    if path is None or os.path.isabs(path) or src.resolve() == dst.resolve():
        return path
    return os.path.relpath(src / path, dst)


class _Runner:
    def __init__(self, cfg: FilterConfig, adapters: Adapters, base: Path, stems_dir: Path, out_dir: Path):
        self.cfg = cfg
        self.adapters = adapters
        self.base = base
        self.stems_dir = stems_dir
        self.out_dir = out_dir

    def coarse(self, rec: MediaRecord) -> Verdict:
        return coarse_filter(rec, self.cfg)

    def music_event(self, rec: MediaRecord) -> Verdict:
        wave = read_wav(_resolve(rec.audio, self.base))
        return music_event_filter(self.adapters.tagger.music_probs(wave), self.cfg)

    def static_video(self, rec: MediaRecord) -> Verdict:
        clip = sample_frames(_resolve(rec.video, self.base), self.cfg.static_fps)
        return static_video_filter(clip, self.cfg)

    def separation(self, rec: MediaRecord) -> Verdict:
        wave = read_wav(_resolve(rec.audio, self.base))
        try:
            stem = separate_music(wave, self.adapters.separator)
        except StageError as exc:
            # flagged, not dropped: the record keeps its original audio
            logger.warning("separation failed for %s: %s", rec.id, exc)
            return Verdict(True, "separation_error")
        self.stems_dir.mkdir(parents=True, exist_ok=True)
        target = self.stems_dir / f"{rec.id}.wav"
        write_wav(target, stem)
        rec.audio = os.path.relpath(target, self.out_dir)
        return PASS

    def apply(self, stage: str, rec: MediaRecord) -> None:
        try:
            verdict = getattr(self, stage)(rec)
        except (OSError, VideoMusicError) as exc:
            logger.warning("stage %s failed for %s: %s", stage, rec.id, exc)
            reason = "missing_duration" if stage == "coarse" and isinstance(exc, DataError) else f"{stage}_error"
            verdict = Verdict(False, reason)
        rec.stages[stage] = verdict


def _checkpoint_dir(out: Path) -> Path:
    return out.with_name(out.name + ".ckpt")


def _checkpoint_path(out: Path, i: int, stage: str) -> Path:
    return _checkpoint_dir(out) / f"{i:02d}_{stage}.jsonl"


def _latest_checkpoint(out: Path) -> tp.Optional[Path]:
    for i in reversed(range(len(STAGES))):
        p = _checkpoint_path(out, i, STAGES[i])
        if p.is_file():
            return p
    return None


def run_pipeline(manifest: PathLike, cfg: tp.Optional[FilterConfig] = None,
                 adapters: tp.Optional[Adapters] = None, out: tp.Optional[PathLike] = None,
                 resume: bool = False, workers: int = 1) -> PipelineResult:
    """Run coarse, music-event, static-video, separation and rank/split stages.

    Args:
        manifest: input JSONL manifest.
        out: output manifest path; defaults to overwriting ``manifest``.
        resume: start from the newest checkpoint under ``<out>.ckpt/`` if any.
        workers: thread count for the per-record stages; ranking always runs
            single-threaded once every record has been filtered.

    Corrupt manifest rows are written to ``<out>.quarantine.jsonl`` and
    skipped. Separated stems go to ``<out>.stems/<id>.wav`` and replace the
    record's ``audio`` path.
    """
    cfg = cfg or FilterConfig()
    cfg.validate()
    adapters = adapters or Adapters()
    manifest = Path(manifest)
    out = Path(out) if out is not None else manifest
    out_dir = out.parent.resolve()

    records, bad = read_manifest(manifest)
    base = manifest.parent.resolve()
    resumed = None
    if resume:
        ckpt = _latest_checkpoint(out)
        if ckpt is not None:
            records, _ = read_manifest(ckpt)
            base = out_dir
            resumed = str(ckpt)
            logger.info("resuming from %s", ckpt)
    if base != out_dir:
        for r in records:
            r.video = _rebase(r.video, base, out_dir)
            r.audio = _rebase(r.audio, base, out_dir)
        base = out_dir

    seen: tp.Set[str] = set()
    unique = []
    for r in records:
        if r.id in seen:
            bad.append((0, r.to_json(), f"duplicate id {r.id}"))
            continue
        seen.add(r.id)
        unique.append(r)
    records = unique

    quarantine = out.with_name(out.name + ".quarantine.jsonl")
    if bad:
        write_lines(quarantine, (json.dumps({"line": n, "raw": raw, "error": err}) for n, raw, err in bad))

    runner = _Runner(cfg, adapters, base, out.with_name(out.name + ".stems"), out_dir)
    for i, stage in enumerate(STAGES):
        if stage == "rank_split":
            _rank_stage(records, cfg, adapters, base)
        else:
            todo = [r for r in records if not r.rejected and stage not in r.stages]
            if workers > 1 and len(todo) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(lambda r: runner.apply(stage, r), todo))
            else:
                for r in todo:
                    runner.apply(stage, r)
        write_manifest(_checkpoint_path(out, i, stage), records)

    write_manifest(out, records)
    return PipelineResult(records, bad, resumed)


def _rank_stage(records: tp.List[MediaRecord], cfg: FilterConfig, adapters: Adapters, base: Path) -> None:
    eligible = [r for r in records if not r.rejected]
    if not eligible or all("rank_split" in r.stages for r in eligible):
        return

    def score(rec: MediaRecord) -> float:
        wave = read_wav(_resolve(rec.audio, base))
        clip = sample_frames(_resolve(rec.video, base), cfg.static_fps)
        return av_alignment(wave, clip, adapters.av_embedder)

    rank_and_split(eligible, cfg.finetune_n, cfg.bench_n, cfg.seed, scorer=score)
    for r in eligible:
        r.stages["rank_split"] = PASS


def read_expert_scores(path: PathLike) -> tp.Dict[str, float]:
    """Read expert annotations: JSONL rows ``{"id": ..., "score": ...}``."""
    scores = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                scores[str(row["id"])] = float(row["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad annotation row ({exc})") from exc
    return scores
