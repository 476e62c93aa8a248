"""Manifest records, filter thresholds and JSONL manifest I/O."""

from __future__ import annotations

import json
import os
import tempfile
import typing as tp
from dataclasses import dataclass, field, fields

from ..errors import ConfigError, DataError

STAGES = ("coarse", "music_event", "static_video", "separation", "rank_split")
SPLITS = ("finetune", "pretrain", "bench_candidate", "bench", "bench_rejected")


@dataclass
class Verdict:
    passed: bool
    reason: tp.Optional[str] = None

    def to_dict(self) -> dict:
        return {"pass": self.passed, "reason": self.reason}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(bool(d["pass"]), d.get("reason"))


PASS = Verdict(True)


@dataclass
class MediaRecord:
    id: str
    video: tp.Optional[str]
    audio: tp.Optional[str]
    duration_s: tp.Optional[float]
    category: tp.Optional[str] = None
    stages: tp.Dict[str, Verdict] = field(default_factory=dict)
    alignment_score: tp.Optional[float] = None
    split: tp.Optional[str] = None

    @property
    def rejected(self) -> bool:
        return any(not v.passed for v in self.stages.values())

    @property
    def rejection(self) -> tp.Optional[str]:
        for v in self.stages.values():
            if not v.passed:
                return v.reason
        return None

    def to_json(self) -> str:
        doc = {
            "id": self.id, "video": self.video, "audio": self.audio, "duration_s": self.duration_s,
            "category": self.category,
            "stages": {name: v.to_dict() for name, v in self.stages.items()},
            "alignment_score": self.alignment_score, "split": self.split,
        }
        return json.dumps(doc, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "MediaRecord":
        if not isinstance(d, dict) or "id" not in d:
            raise DataError("manifest row has no 'id'")
        duration = d.get("duration_s")
        if duration is not None and not isinstance(duration, (int, float)):
            raise DataError(f"record {d['id']}: duration_s must be a number")
        stages = {name: Verdict.from_dict(v) for name, v in (d.get("stages") or {}).items()}
        score = d.get("alignment_score")
        return cls(str(d["id"]), d.get("video"), d.get("audio"),
                   None if duration is None else float(duration), d.get("category"), stages,
                   None if score is None else float(score), d.get("split"))


@dataclass
class FilterConfig:
    min_duration_s: float = 30.0
    max_duration_s: float = 480.0
    blocked_categories: tp.Tuple[str, ...] = ("Interview", "News", "Gaming")
    music_confidence: float = 0.5
    music_ratio: float = 0.5
    ssim_threshold: float = 0.8
    ssim_windows: int = 8
    # "above": reject near-static videos (mean SSIM > threshold);
    # "below": reject videos whose mean SSIM is under the threshold
    ssim_reject: str = "above"
    static_fps: float = 1.0
    finetune_n: int = 20000
    bench_n: int = 1000
    bench_final_n: int = 300
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.min_duration_s < self.max_duration_s:
            raise ConfigError("need 0 <= min_duration_s < max_duration_s")
        for name in ("music_confidence", "music_ratio"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not -1 <= self.ssim_threshold <= 1:
            raise ConfigError("ssim_threshold must lie in [-1, 1]")
        if self.ssim_windows < 1 or self.static_fps <= 0:
            raise ConfigError("ssim_windows and static_fps must be positive")
        if self.ssim_reject not in ("above", "below"):
            raise ConfigError("ssim_reject must be 'above' or 'below'")
        if min(self.finetune_n, self.bench_n, self.bench_final_n) < 0:
            raise ConfigError("split sizes must be non-negative")

    @classmethod
    def from_dict(cls, d: tp.Mapping[str, tp.Any]) -> "FilterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown curation settings: {sorted(unknown)}")
        d = dict(d)
        if "blocked_categories" in d:
            d["blocked_categories"] = tuple(d["blocked_categories"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def read_manifest(path: tp.Union[str, os.PathLike]) -> tp.Tuple[tp.List[MediaRecord], tp.List[tp.Tuple[int, str, str]]]:
    """Parse a JSONL manifest.

    Returns:
        ``(records, quarantined)`` where ``quarantined`` lists
        ``(line_number, raw_line, error)`` for rows that failed to parse.
    """
    records, bad = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(MediaRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, DataError, KeyError, TypeError, ValueError) as exc:
                bad.append((lineno, line.rstrip("\n"), str(exc)))
    return records, bad


def write_lines(path: tp.Union[str, os.PathLike], lines: tp.Iterable[str]) -> None:
    """Atomically write text lines (temp file in the same directory, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            for line in lines:
                f.write(line + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path: tp.Union[str, os.PathLike], records: tp.Iterable[MediaRecord]) -> None:
    write_lines(path, (r.to_json() for r in records))
