"""Video-to-music generation with long-short-term visual conditioning.

The numpy-level pieces (codec, token layouts, metrics, curation) import
without torch; the model, training and inference modules need it.
"""

__version__ = "0.1.0"

from .codec import StubCodec, Waveform, codec_decode, codec_encode, read_wav, write_wav
from .errors import (ConfigError, DataError, DecodeError, EmptyInputError, FormatError, NumericError,
                     PairingError, StageError, VideoMusicError)
from .frontend import FrameFeatures, StubFrameEncoder, VideoClip, encode_frames, sample_frames
from .metrics import average_rank, density_coverage, frechet, prediction_kl
from .tokens import PATTERNS, TokenMatrix, deinterleave, interleave
