"""Teacher-forced training: batching, loss, schedule, clipping and EMA."""

from __future__ import annotations

import csv
import logging
import math
import os
import typing as tp
from dataclasses import dataclass, field

import numpy as np
import torch

from .codec import Codec, Waveform
from .errors import ConfigError, EmptyInputError, NumericError, PairingError
from .frontend import (DEFAULT_FPS, DEFAULT_SEGMENT_S, FrameEncoder, FrameFeatures, VideoClip,
                       default_n_long, encode_frames, even_indices)
from .model import MusicModel

logger = logging.getLogger(__name__)

PAIR_TOLERANCE_S = 0.5


@dataclass
class TrainConfig:
    lr: float = 1e-3
    min_lr: float = 0.0
    betas: tp.Tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    warmup_steps: int = 20
    total_steps: int = 200
    ema_decay: float = 0.99
    batch_size: int = 8
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(f"need 0 <= warmup ({self.warmup_steps}) < total steps ({self.total_steps})")
        if self.lr <= 0 or self.grad_clip <= 0 or self.batch_size < 1:
            raise ConfigError("lr, grad_clip and batch_size must be positive")
        if not 0 <= self.min_lr <= self.lr:
            raise ConfigError("min_lr must lie in [0, lr]")
        if not 0 < self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in (0, 1)")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up from 0 to ``cfg.lr``, then cosine decay to ``cfg.min_lr`` at ``total_steps``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1 + math.cos(math.pi * progress))


def token_loss(logits: torch.Tensor, target: torch.Tensor, ignore: tp.Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean cross-entropy over the cells not marked in ``ignore``.

    Cells whose target is the filler id (``logits.shape[-1] - 1``) are
    always ignored, so they never contribute to the loss or its gradient.

    Raises:
        EmptyInputError: every cell is ignored.
    """
    target = torch.as_tensor(target, dtype=torch.long)
    if logits.shape[:-1] != target.shape:
        raise ConfigError(f"logits {tuple(logits.shape)} do not match targets {tuple(target.shape)}")
    filler = logits.shape[-1] - 1
    keep = target != filler
    if ignore is not None:
        keep = keep & ~torch.as_tensor(ignore, dtype=torch.bool)
    if not keep.any():
        raise EmptyInputError("every target cell is masked; the loss is undefined")
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, target.clamp(max=filler).unsqueeze(-1)).squeeze(-1)
    return -(picked * keep).sum() / keep.sum()


@dataclass
class Batch:
    long: np.ndarray     # B x N_l x P x D
    short: np.ndarray    # B x N_s x P x D
    targets: np.ndarray  # B x K x S
    short_start_s: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def size(self) -> int:
        return self.targets.shape[0]


def build_batch(pairs: tp.Sequence[tp.Tuple[tp.Union[VideoClip, FrameFeatures], Waveform]], codec: Codec,
                encoder: tp.Optional[FrameEncoder] = None, segment_s: float = DEFAULT_SEGMENT_S,
                n_long: tp.Optional[int] = None, rng: tp.Union[None, int, np.random.Generator] = None,
                starts_s: tp.Optional[tp.Sequence[float]] = None) -> Batch:
    """Turn paired (video, audio) examples into one training batch.

    Each example contributes the evenly spaced long-term frames of the whole
    video, a contiguous short-term window of ``segment_s`` seconds (clipped to
    the shortest clip in the batch) and the codec tokens covering exactly the
    same time span. Window starts are frame-aligned and drawn uniformly unless
    ``starts_s`` fixes them.

    Raises:
        PairingError: video and audio durations differ by more than 0.5 s.
    """
    if not pairs:
        raise EmptyInputError("no pairs to batch")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    feats, tokens = [], []
    for i, (video, wave) in enumerate(pairs):
        if isinstance(video, VideoClip):
            if encoder is None:
                raise ConfigError("raw clips need a frame encoder")
            video = encode_frames(video, encoder)
        if abs(video.duration_s - wave.duration_s) > PAIR_TOLERANCE_S:
            raise PairingError(f"pair {i}: video {video.duration_s:.2f} s vs audio {wave.duration_s:.2f} s")
        feats.append(video)
        tokens.append(codec.encode(wave).tokens)

    fps = feats[0].fps
    if any(abs(f.fps - fps) > 1e-9 for f in feats):
        raise ConfigError("all clips in a batch must share one frame rate")
    fr = codec.frame_rate
    shortest = min(min(f.n_frames for f in feats) / fps, min(t.shape[1] for t in tokens) / fr)
    seg = min(segment_s, shortest)
    n_short = max(1, int(math.floor(seg * fps + 1e-9)))
    seg = n_short / fps
    n_tok = int(round(seg * fr))
    n_long = n_long or min(default_n_long(f.n_frames) for f in feats)

    longs, shorts, targets, starts = [], [], [], []
    for i, (f, tok) in enumerate(zip(feats, tokens)):
        max_start = min(f.n_frames - n_short, int(math.floor((tok.shape[1] - n_tok) / fr * fps + 1e-9)))
        max_start = max(max_start, 0)
        if starts_s is not None:
            start = int(round(starts_s[i] * fps))
            if not 0 <= start <= max_start:
                raise IndexError(f"pair {i}: window start {starts_s[i]} s out of range")
        else:
            start = int(rng.integers(0, max_start + 1))
        t0 = int(round(start / fps * fr))
        longs.append(f.values[even_indices(f.n_frames, n_long)])
        shorts.append(f.values[start:start + n_short])
        targets.append(tok[:, t0:t0 + n_tok])
        starts.append(start / fps)
    return Batch(np.stack(longs), np.stack(shorts), np.stack(targets), np.asarray(starts))


@dataclass
class StepResult:
    loss: float
    lr: float
    grad_norm: float
    skipped: bool = False


class Trainer:
    """Owns the model, AdamW state and EMA shadows; one update per :meth:`train_step`."""

    def __init__(self, model: MusicModel, config: tp.Optional[TrainConfig] = None):
        self.model = model
        self.config = config = config or TrainConfig()
        config.validate()
        decay, no_decay = [], []
        for name, p in model.named_parameters():
            (decay if p.dim() >= 2 and "embeddings" not in name and "pos" not in name else no_decay).append(p)
        self.optimizer = torch.optim.AdamW(
            [{"params": decay, "weight_decay": config.weight_decay},
             {"params": no_decay, "weight_decay": 0.0}],
            lr=config.lr, betas=config.betas)
        self.ema = {name: p.detach().clone() for name, p in model.named_parameters()}
        self.step_count = 0

    def compute_loss(self, batch: Batch) -> torch.Tensor:
        logits = self.model(batch.long, batch.short, torch.as_tensor(batch.targets))
        return token_loss(logits, batch.targets)

    def train_step(self, batch: Batch, step_index: tp.Optional[int] = None) -> StepResult:
        """One clipped AdamW update at the scheduled learning rate, then an EMA update.

        A batch whose gradient is exactly zero skips the optimizer so that
        weight decay does not move the parameters; the EMA still advances.

        Raises:
            NumericError: the loss or the gradient is not finite.
        """
        step = self.step_count if step_index is None else step_index
        lr = lr_at(step, self.config)
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.compute_loss(batch)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss {loss.item()} at step {step} (lr={lr:.3g}, "
                               f"targets {batch.targets.shape}, features max|x|={np.abs(batch.short).max():.3g})")
        loss.backward()
        params = [p for p in self.model.parameters() if p.grad is not None]
        norm = float(torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip))
        if not math.isfinite(norm):
            raise NumericError(f"non-finite gradient norm at step {step}")
        skipped = norm == 0.0
        if not skipped:
            for group in self.optimizer.param_groups:
                group["lr"] = lr
            self.optimizer.step()
        self._update_ema()
        self.step_count = step + 1
        return StepResult(float(loss.detach()), lr, norm, skipped)

    @torch.no_grad()
    def _update_ema(self) -> None:
        d = self.config.ema_decay
        for name, p in self.model.named_parameters():
            self.ema[name].mul_(d).add_(p.detach(), alpha=1 - d)

    def save(self, path: tp.Union[str, os.PathLike]) -> None:
        """Checkpoint: model arrays under ``model/``, EMA shadows under ``ema/``."""
        ema = {"ema/" + k: v.cpu().numpy() for k, v in self.ema.items()}
        self.model.save(path, extra_arrays=ema, meta={"step": self.step_count})

    def fit(self, batches: tp.Iterable[Batch], log_path: tp.Optional[tp.Union[str, os.PathLike]] = None,
            steps: tp.Optional[int] = None) -> tp.List[StepResult]:
        """Run ``steps`` updates (default: until ``total_steps``), cycling ``batches``.

        Each step is appended to ``log_path`` as a CSV row ``step,loss,lr``.
        """
        batches = list(batches)
        if not batches:
            raise EmptyInputError("no batches to train on")
        steps = steps if steps is not None else self.config.total_steps - self.step_count
        results = []
        writer_file = None
        try:
            if log_path is not None:
                new = not os.path.exists(log_path) or os.path.getsize(log_path) == 0
                writer_file = open(log_path, "a", newline="")
                writer = csv.writer(writer_file)
                if new:
                    writer.writerow(["step", "loss", "lr"])
            for i in range(steps):
                step = self.step_count
                res = self.train_step(batches[i % len(batches)])
                results.append(res)
                if writer_file is not None:
                    writer.writerow([step, f"{res.loss:.6f}", f"{res.lr:.6g}"])
                if step % 50 == 0:
                    logger.info("step %d loss %.4f lr %.3g", step, res.loss, res.lr)
        finally:
            if writer_file is not None:
                writer_file.close()
        return results


def train_phases(trainer: Trainer, phases: tp.Sequence[tp.Tuple[tp.Sequence[Batch], int]],
                 log_path: tp.Optional[tp.Union[str, os.PathLike]] = None) -> tp.List[StepResult]:
    """Chain corpora (e.g. a large pretraining set, then a finetuning set) under one schedule."""
    results = []
    for batches, steps in phases:
        results.extend(trainer.fit(batches, log_path=log_path, steps=steps))
    return results


@torch.no_grad()
def teacher_forced_accuracy(model: MusicModel, batch: Batch) -> float:
    """Fraction of non-filler cells where the argmax over real ids equals the target."""
    model.eval()
    logits = model(batch.long, batch.short, torch.as_tensor(batch.targets))
    V = logits.shape[-1] - 1
    target = torch.as_tensor(batch.targets)
    pred = logits[..., :V].argmax(-1)
    keep = target != V
    return float(((pred == target) & keep).sum() / keep.sum())
