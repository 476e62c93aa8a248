"""
Curating a small video/music manifest
=====================================

The pipeline reads a JSONL manifest and records one verdict per stage for
each record: coarse rules, music-event ratio, static-video check, source
separation, then alignment ranking into finetune / benchmark-candidate /
pretrain splits.  All adapters here are the built-in deterministic stubs.
"""

import json
import tempfile
from pathlib import Path

import cv2
import numpy as np

from videomusic.codec import Waveform, write_wav
from videomusic.curation import FilterConfig, run_pipeline

root = Path(tempfile.mkdtemp())
rng = np.random.default_rng(1)
sr = 32000
t = np.arange(3 * sr) / sr


def video(path, still=False):
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 2.0, (32, 32))
    for _ in range(20):
        frame = np.full((32, 32, 3), 128, np.uint8) if still else rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        writer.write(frame)
    writer.release()


music = 0.3 * np.sin(2 * np.pi * 220 * t)
speech_like = np.clip(0.2 * rng.standard_normal(t.size), -1, 1)

records = [
    ("concert", 95.0, "Music", music, False),
    ("travel", 240.0, "Travel", music, False),
    ("cooking", 180.0, "Food", music, False),
    ("teaser", 12.0, "Music", music, False),      # under 30 s
    ("stream", 300.0, "Gaming", music, False),    # blocked category
    ("podcast", 600.0, "Talk", music, False),     # over 480 s
    ("vlog", 90.0, "Vlog", speech_like, False),   # mostly non-music frames
    ("album", 200.0, "Music", music, True),       # a single still image
]
rows = []
for rid, dur, cat, audio, still in records:
    video(root / f"{rid}.avi", still)
    write_wav(root / f"{rid}.wav", Waveform(audio, sr))
    rows.append(json.dumps({"id": rid, "video": f"{rid}.avi", "audio": f"{rid}.wav",
                            "duration_s": dur, "category": cat}))
rows.insert(3, "{broken row")
(root / "manifest.jsonl").write_text("\n".join(rows) + "\n")

###############################################################################
# Full-scale runs use a 20K finetune split; this toy manifest gets 1 + 1.

cfg = FilterConfig(finetune_n=1, bench_n=1)
result = run_pipeline(root / "manifest.jsonl", cfg, out=root / "out" / "curated.jsonl")

for r in result.records:
    status = f"rejected ({r.rejection})" if r.rejected else f"{r.split}, score {r.alignment_score:+.3f}"
    print(f"{r.id:8s} {status}")
print("quarantined lines:", [line for line, _, _ in result.quarantined])

###############################################################################
# Running again on the output changes nothing: every stage already has a
# verdict, so the manifest is rewritten byte for byte.

before = (root / "out" / "curated.jsonl").read_bytes()
run_pipeline(root / "out" / "curated.jsonl", cfg)
print("idempotent:", (root / "out" / "curated.jsonl").read_bytes() == before)
