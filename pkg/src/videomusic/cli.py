"""Command-line entry point: ``videomusic {curate,train,generate,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error
(including missing input files). Errors are printed as
``error [<command>/<stage>]: message``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import sys
import typing as tp
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .codec import Waveform, read_wav, write_wav
from .config import RunConfig, load_config
from .curation import finalize_bench, read_expert_scores, read_manifest, run_pipeline, write_manifest
from .errors import ConfigError, VideoMusicError
from .evaluation import evaluate_dirs
from .frontend import encode_frames, sample_frames
from .model import MusicModel
from .sliding import generate_long, plan_windows, sidecar
from .training import Trainer, build_batch

logger = logging.getLogger("videomusic")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class StageFailure(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(str(exc))
        self.stage = stage
        self.exc = exc


@contextlib.contextmanager
def stage(name: str):
    """Attribute any package error raised inside the block to ``name``."""
    try:
        yield
    except (VideoMusicError, OSError, IndexError, ValueError) as exc:
        raise StageFailure(name, exc) from exc


def _require_file(path: tp.Union[str, Path], what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _config(args) -> RunConfig:
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if args.config is not None:
        _require_file(args.config, "config file")
    return load_config(args.config, args.set or (), **flags)


def cmd_curate(args, cfg: RunConfig) -> int:
    manifest = _require_file(args.manifest, "manifest")
    with stage("adapters"):
        adapters = cfg.make_adapters()
    with stage("pipeline"):
        result = run_pipeline(manifest, cfg.curation, adapters, args.out, resume=args.resume, workers=args.workers)
    if args.expert_scores:
        scores = read_expert_scores(_require_file(args.expert_scores, "expert score file"))
        with stage("bench"):
            finalize_bench(result.records, scores, cfg.curation.bench_final_n)
            write_manifest(args.out, result.records)
    cfg.save(str(args.out) + ".config.toml")
    kept = sum(not r.rejected for r in result.records)
    print(f"{len(result.records)} records, {kept} kept, {len(result.quarantined)} quarantined -> {args.out}")
    return EXIT_OK


def _training_pairs(manifest: Path, split: str, cfg: RunConfig, encoder):
    records, bad = read_manifest(manifest)
    if bad:
        logger.warning("%d corrupt manifest rows skipped", len(bad))
    chosen = [r for r in records if not r.rejected and (split == "all" or r.split == split)]
    if not chosen:
        raise ConfigError(f"no usable records with split {split!r} in {manifest}")
    base = manifest.parent
    pairs = []
    for r in chosen:
        clip = sample_frames(base / r.video, cfg.frontend.fps)
        wave = read_wav(base / r.audio)
        if wave.sample_rate != cfg.codec.sample_rate:
            raise ConfigError(f"{r.audio}: sample rate {wave.sample_rate} != codec rate {cfg.codec.sample_rate}")
        pairs.append((encode_frames(clip, encoder), wave))
    return pairs


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = _require_file(args.manifest, "manifest")
    if args.steps is not None:
        cfg.train.total_steps = args.steps
        cfg.train.warmup_steps = min(cfg.train.warmup_steps, max(args.steps - 1, 0))
    cfg.validate()
    out = Path(args.out) if args.out else cfg.resolve(cfg.paths.checkpoint)
    log = Path(args.log) if args.log else cfg.resolve(cfg.paths.train_log)
    torch.manual_seed(cfg.seed)
    with stage("frontend"):
        encoder = cfg.make_encoder()
        pairs = _training_pairs(manifest, args.split, cfg, encoder)
    codec = cfg.make_codec()
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.train.batch_size
    with stage("batching"):
        batches = [build_batch(pairs[i:i + bs], codec, segment_s=cfg.frontend.segment_s,
                               n_long=None, rng=rng) for i in range(0, len(pairs), bs)]
    with stage("model"):
        model = MusicModel(cfg.model.fusion_config(), cfg.model.decoder_config())
        trainer = Trainer(model, cfg.train)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.parent.mkdir(parents=True, exist_ok=True)
    with stage("training"):
        results = trainer.fit(batches, log_path=log)
    ema = {"ema/" + k: v.cpu().numpy() for k, v in trainer.ema.items()}
    meta = {"step": trainer.step_count, "frontend": asdict(cfg.frontend), "codec": asdict(cfg.codec),
            "seed": cfg.seed}
    with stage("checkpoint"):
        model.save(out, extra_arrays=ema, meta=meta)
    cfg.save(str(out) + ".config.toml")
    print(f"trained {len(results)} steps, final loss {results[-1].loss:.4f} -> {out}")
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    video = _require_file(args.video, "video")
    ckpt = _require_file(args.checkpoint, "checkpoint")
    from .archive import load_archive

    with stage("checkpoint"):
        _, meta = load_archive(ckpt)
        model = MusicModel.load(ckpt, use_ema=not args.no_ema)
    # the checkpoint fixes the model's input contract: frame rate, encoder and codec
    doc = cfg.to_dict()
    for section in ("frontend", "codec"):
        if section in meta:
            doc[section] = {**doc[section], **meta[section]}
    doc["model"] = {**doc["model"], "feature_dim": model.fusion.config.dim, "dim": model.decoder.config.dim,
                    "n_codebooks": model.decoder.K, "cardinality": model.decoder.V}
    with stage("config"):
        cfg = RunConfig.from_dict(doc)
    with stage("frontend"):
        clip = sample_frames(video, cfg.frontend.fps)
        features = encode_frames(clip, cfg.make_encoder())
    with stage("inference"):
        schedule = plan_windows(clip.duration_s, cfg.inference.window_s, cfg.inference.overlap_s)
        result = generate_long(features, model, cfg.make_codec(), schedule, seed=cfg.seed,
                               top_k=cfg.sampling.top_k, temperature=cfg.sampling.temperature,
                               n_long=min(features.n_frames, cfg.frontend.max_long_frames))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with stage("output"):
        write_wav(out, result.waveform)
        doc = sidecar(result, cfg.to_dict(), video=str(video), checkpoint=str(ckpt),
                      video_duration_s=clip.duration_s, version=__version__)
        out.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    print(f"{result.waveform.duration_s:.2f} s in {len(schedule.windows)} windows -> {out}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    pairs = _require_file(args.pairs, "pairs file")
    for d, what in ((args.pred, "prediction directory"), (args.ref, "reference directory")):
        if not Path(d).is_dir():
            raise UsageError(f"{what} not found: {d}")
    with stage("evaluation"):
        reports = evaluate_dirs(args.pred, args.ref, pairs, args.out)
    base = str(args.out)
    for suffix in (".json", ".csv"):
        if base.endswith(suffix):
            base = base[:-len(suffix)]
    cfg.save(base + ".config.toml")
    for r in reports:
        row = r.row()
        print(", ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videomusic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("curate", help="filter and split a media manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the last stage checkpoint")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--expert-scores", help="JSONL of {id, score} to finalize the benchmark split")
    common(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="train on a curated manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="finetune", help="split to train on, or 'all'")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="CSV training log")
    p.add_argument("--steps", type=int)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate music for one video")
    p.add_argument("--video", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output WAV; the sidecar goes next to it as .json")
    p.add_argument("--no-ema", action="store_true", help="use raw weights instead of EMA shadows")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compute the objective metric table")
    p.add_argument("--pred", required=True, help="generated clips, one sub-directory per method")
    p.add_argument("--ref", required=True)
    p.add_argument("--pairs", required=True, help="CSV with a clip column and an optional video column")
    p.add_argument("--out", required=True, help="report prefix; writes .csv and .json")
    common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: tp.Optional[tp.Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            cfg = _config(args)
        except ConfigError as exc:
            raise UsageError(str(exc)) from exc
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailure as exc:
        code = EXIT_USAGE if isinstance(exc.exc, ConfigError) else EXIT_RUNTIME
        print(f"error [{args.command}/{exc.stage}]: {type(exc.exc).__name__}: {exc.exc}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"error [{args.command}/config]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VideoMusicError as exc:
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
