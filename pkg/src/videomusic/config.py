"""Run configuration: one TOML document with a section per module.

Precedence, lowest to highest: built-in defaults, the config file,
``--set section.key=value`` overrides, then dedicated command-line flags.
Relative paths are taken relative to ``$VIDEOMUSIC_HOME`` when it is set,
otherwise to the working directory.
"""

from __future__ import annotations

import importlib
import os
import sys
import typing as tp
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .codec import DEFAULT_SAMPLE_RATE, StubCodec
from .curation.records import FilterConfig
from .decoder import DEFAULT_TEMPERATURE, DEFAULT_TOP_K, DecoderConfig
from .errors import ConfigError
from .frontend import DEFAULT_FPS, DEFAULT_SEGMENT_S, MAX_LONG_FRAMES, StubFrameEncoder
from .fusion import FusionConfig
from .sliding import DEFAULT_OVERLAP_S, DEFAULT_WINDOW_S
from .tokens import DEFAULT_PATTERN
from .training import TrainConfig

HOME_ENV = "VIDEOMUSIC_HOME"


@dataclass
class FrontendSection:
    fps: float = DEFAULT_FPS
    segment_s: float = DEFAULT_SEGMENT_S
    max_long_frames: int = MAX_LONG_FRAMES
    # "stub" or an import string "package.module:factory"
    encoder: str = "stub"
    encoder_grid: int = 2

    def validate(self) -> None:
        if self.fps <= 0 or self.segment_s <= 0:
            raise ConfigError("frontend fps and segment_s must be positive")
        if self.max_long_frames < 1 or self.encoder_grid < 1:
            raise ConfigError("max_long_frames and encoder_grid must be positive")


@dataclass
class ModelSection:
    feature_dim: int = 16
    dim: int = 32
    term_heads: int = 4
    fusion_heads: int = 4
    refiner_layers: int = 2
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    n_codebooks: int = 4
    cardinality: int = 255
    pattern: str = DEFAULT_PATTERN

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(dim=self.feature_dim, out_dim=self.dim, term_heads=self.term_heads,
                            fusion_heads=self.fusion_heads, refiner_layers=self.refiner_layers)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(n_codebooks=self.n_codebooks, cardinality=self.cardinality, dim=self.dim,
                             layers=self.layers, heads=self.heads, mlp_ratio=self.mlp_ratio,
                             pattern=self.pattern)

    def validate(self) -> None:
        self.fusion_config().validate()
        self.decoder_config().validate()


@dataclass
class SamplingSection:
    top_k: int = DEFAULT_TOP_K
    temperature: float = DEFAULT_TEMPERATURE

    def validate(self) -> None:
        if self.top_k < 1 or self.temperature <= 0:
            raise ConfigError("sampling needs top_k >= 1 and temperature > 0")


@dataclass
class InferenceSection:
    window_s: float = DEFAULT_WINDOW_S
    overlap_s: float = DEFAULT_OVERLAP_S

    def validate(self) -> None:
        if not 0 < self.overlap_s < self.window_s:
            raise ConfigError(f"need 0 < overlap ({self.overlap_s}) < window ({self.window_s})")


@dataclass
class CodecSection:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_rate: float = 50.0

    def validate(self) -> None:
        if self.sample_rate <= 0 or self.frame_rate <= 0:
            raise ConfigError("codec rates must be positive")


@dataclass
class AdapterSection:
    """Import strings (``module:attr``) for pluggable components; ``stub`` selects the built-in one."""
    tagger: str = "stub"
    separator: str = "stub"
    av_embedder: str = "stub"

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value != "stub" and ":" not in value:
                raise ConfigError(f"adapter {f.name}={value!r} must be 'stub' or 'module:attr'")


@dataclass
class PathSection:
    data_root: str = "."
    checkpoint: str = "checkpoints/model.npz"
    train_log: str = "checkpoints/train_log.csv"


@dataclass
class RunConfig:
    seed: int = 0
    frontend: FrontendSection = field(default_factory=FrontendSection)
    model: ModelSection = field(default_factory=ModelSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    codec: CodecSection = field(default_factory=CodecSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    curation: FilterConfig = field(default_factory=FilterConfig)
    adapters: AdapterSection = field(default_factory=AdapterSection)
    paths: PathSection = field(default_factory=PathSection)

    def validate(self) -> None:
        for f in fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        self.make_codec()

    def to_dict(self) -> dict:
        return _strip_none(asdict(self))

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path: tp.Union[str, os.PathLike]) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, doc: tp.Mapping[str, tp.Any]) -> "RunConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name, value in doc.items():
            default = getattr(cls(), name)
            if is_dataclass(default):
                if not isinstance(value, dict):
                    raise ConfigError(f"[{name}] must be a table")
                kwargs[name] = _build_section(type(default), name, value)
            else:
                kwargs[name] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def make_codec(self) -> StubCodec:
        return StubCodec(sample_rate=self.codec.sample_rate, frame_rate=self.codec.frame_rate,
                         n_codebooks=self.model.n_codebooks, cardinality=self.model.cardinality)

    def make_encoder(self):
        if self.frontend.encoder == "stub":
            return StubFrameEncoder(grid=self.frontend.encoder_grid, dim=self.model.feature_dim)
        enc = import_object(self.frontend.encoder)()
        if enc.dim != self.model.feature_dim:
            raise ConfigError(f"encoder width {enc.dim} != model.feature_dim {self.model.feature_dim}")
        return enc

    def make_adapters(self):
        from .curation.filters import BandStopSeparator
        from .curation.pipeline import Adapters
        from .extractors import StubAVEmbedder, StubMusicTagger

        a = self.adapters

        def build(spec, stub):
            return stub() if spec == "stub" else import_object(spec)()

        return Adapters(tagger=build(a.tagger, lambda: StubMusicTagger(sample_rate=self.codec.sample_rate)),
                        separator=build(a.separator, BandStopSeparator),
                        av_embedder=build(a.av_embedder, StubAVEmbedder))

    def resolve(self, path: tp.Union[str, os.PathLike]) -> Path:
        """Resolve ``path`` against ``paths.data_root`` (itself under ``$VIDEOMUSIC_HOME``)."""
        p = Path(path)
        if p.is_absolute():
            return p
        root = Path(self.paths.data_root)
        if not root.is_absolute():
            root = Path(os.environ.get(HOME_ENV, ".")) / root
        return root / p


def _strip_none(value):
    if isinstance(value, dict):
        return {k: _strip_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, tuple):
        return list(value)
    return value


def _build_section(cls, name: str, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    values = dict(values)
    default = cls()
    for key, v in values.items():
        ref = getattr(default, key)
        if isinstance(ref, tuple):
            values[key] = tuple(v)
        elif isinstance(ref, float) and isinstance(v, int) and not isinstance(v, bool):
            values[key] = float(v)
        elif ref is not None and not isinstance(v, type(ref)):
            raise ConfigError(f"[{name}].{key} expects {type(ref).__name__}, got {v!r}")
    return cls(**values)


def _merge(base: dict, extra: tp.Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_override(item: str) -> dict:
    """Turn ``section.key=value`` into a nested dict; values use TOML syntax, bare words are strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    doc: dict = {parts[-1]: value}
    for p in reversed(parts[:-1]):
        doc = {p: doc}
    return doc


def load_config(path: tp.Optional[tp.Union[str, os.PathLike]] = None,
                overrides: tp.Sequence[str] = (), **flags) -> RunConfig:
    """Load defaults, then ``path``, then ``overrides``, then ``flags`` given as ``section__key=value``."""
    doc: dict = RunConfig().to_dict()
    if path is not None:
        try:
            with open(path, "rb") as f:
                doc = _merge(doc, tomllib.load(f))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides:
        doc = _merge(doc, parse_override(item))
    for key, value in flags.items():
        if value is None:
            continue
        parts = key.split("__")
        sub: dict = {parts[-1]: value}
        for p in reversed(parts[:-1]):
            sub = {p: sub}
        doc = _merge(doc, sub)
    return RunConfig.from_dict(doc)


def import_object(spec: str):
    """Import ``package.module:attr``."""
    module, _, attr = spec.partition(":")
    if not module or not attr:
        raise ConfigError(f"import string {spec!r} must look like 'module:attr'")
    try:
        obj = importlib.import_module(module)
    except ImportError as exc:
        raise ConfigError(f"cannot import {module!r}: {exc}") from exc
    for part in attr.split("."):
        try:
            obj = getattr(obj, part)
        except AttributeError:
            raise ConfigError(f"{module!r} has no attribute {attr!r}") from None
    return obj
