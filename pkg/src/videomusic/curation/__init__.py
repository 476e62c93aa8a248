"""Dataset curation: rule and content filters, separation, alignment ranking."""

from .filters import (BandStopSeparator, IdentitySeparator, Separator, av_alignment, coarse_filter,
                      finalize_bench, music_event_filter, music_ratio, rank_and_split, separate_music,
                      static_video_filter, window_ssim)
from .pipeline import Adapters, PipelineResult, read_expert_scores, run_pipeline
from .records import (PASS, SPLITS, STAGES, FilterConfig, MediaRecord, Verdict, read_manifest,
                      write_manifest)
from .ssim import ssim

__all__ = [
    "Adapters", "BandStopSeparator", "FilterConfig", "IdentitySeparator", "MediaRecord", "PASS",
    "PipelineResult", "SPLITS", "STAGES", "Separator", "Verdict", "av_alignment", "coarse_filter",
    "finalize_bench", "music_event_filter", "music_ratio", "rank_and_split", "read_expert_scores",
    "read_manifest", "run_pipeline", "separate_music", "ssim", "static_video_filter",
    "window_ssim", "write_manifest",
]
