"""
From video frames to a long music track
=======================================

A toy end-to-end run on CPU: write a synthetic video, sample it at 2 fps,
encode the frames, fit a small model to a few clip/audio pairs, then
generate music for a 70 second video with overlapping windows.
Nothing here is meant to sound good; it shows how the pieces connect.
"""

import tempfile
from pathlib import Path

import cv2
import numpy as np
import torch

from videomusic.codec import StubCodec, Waveform, write_wav
from videomusic.decoder import DecoderConfig
from videomusic.frontend import StubFrameEncoder, encode_frames, sample_frames
from videomusic.fusion import FusionConfig
from videomusic.model import MusicModel
from videomusic.sliding import generate_long, plan_windows
from videomusic.training import TrainConfig, Trainer, build_batch, teacher_forced_accuracy

work = Path(tempfile.mkdtemp())
rng = np.random.default_rng(0)


def write_video(path, n_frames, fps=4.0, size=32):
    # a bright square drifting over noise
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (size, size))
    for i in range(n_frames):
        frame = rng.integers(0, 60, (size, size, 3), dtype=np.uint8)
        x = (2 * i) % (size - 8)
        frame[8:16, x:x + 8] = 255
        writer.write(frame)
    writer.release()


###############################################################################
# Frame sampling and encoding.  Frames are taken at t = k / fps; the stub
# encoder turns each one into g*g patch tokens plus a class token.

write_video(work / "clip.avi", 24)
clip = sample_frames(work / "clip.avi", fps=2.0)
encoder = StubFrameEncoder(grid=2, dim=16)
features = encode_frames(clip, encoder)
print("frames", clip.frames.shape, "-> features", features.values.shape)

###############################################################################
# A small codec (8 kHz, 10 token frames per second) keeps training quick.

codec = StubCodec(sample_rate=8000, frame_rate=10, n_codebooks=4, cardinality=31)
t = np.arange(6 * 8000) / 8000
pairs = []
for i in range(4):
    write_video(work / f"train{i}.avi", 24)
    feats = encode_frames(sample_frames(work / f"train{i}.avi", 2.0), encoder)
    audio = Waveform(0.2 * np.sin(2 * np.pi * (110 + 40 * i) * t), 8000)
    pairs.append((feats, audio))
batch = build_batch(pairs, codec, segment_s=4.0, starts_s=[0.0] * 4)
print("targets", batch.targets.shape)

torch.manual_seed(0)
model = MusicModel(FusionConfig(dim=16, out_dim=32, term_heads=4, fusion_heads=4),
                   DecoderConfig(n_codebooks=4, cardinality=31, dim=32, layers=2, heads=4))
trainer = Trainer(model, TrainConfig(lr=3e-3, warmup_steps=20, total_steps=150))
results = trainer.fit([batch])
print(f"loss {results[0].loss:.3f} -> {results[-1].loss:.3f}",
      f"accuracy {teacher_forced_accuracy(model, batch):.2f}")

###############################################################################
# Sliding-window generation.  Windows are 30 s and start every 25 s; each
# one is prompted with the last 5 s of tokens from the window before.

write_video(work / "long.avi", 280)  # 70 s at 4 fps
long_feats = encode_frames(sample_frames(work / "long.avi", 2.0), encoder)
schedule = plan_windows(70.0)
for w in schedule.windows:
    print(f"window [{w.t_start:4.1f}, {w.t_end:4.1f}) emits [{w.emit_start:4.1f}, {w.emit_end:4.1f})")

out = generate_long(long_feats, model, codec, schedule, seed=0, top_k=10)
print("tokens", out.tokens.tokens.shape, "audio %.2f s" % out.waveform.duration_s)
write_wav(work / "music.wav", out.waveform)
print("wrote", work / "music.wav")
