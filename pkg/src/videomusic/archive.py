"""Flat named-array archives used for parameter checkpoints.

An archive is a NumPy ``.npz`` file. Every parameter is stored under its
dotted name (e.g. ``fusion/w_q``); array shapes and dtypes travel with the
arrays. One extra entry, ``__meta__``, holds a UTF-8 JSON document with at
least ``{"format": "videomusic-archive", "version": 1}`` plus caller metadata
(model configs, step counters).
"""

from __future__ import annotations

import json
import os
import tempfile
import typing as tp

import numpy as np

from .errors import FormatError

FORMAT = "videomusic-archive"
VERSION = 1
_META_KEY = "__meta__"


def save_archive(path: tp.Union[str, os.PathLike], arrays: tp.Mapping[str, np.ndarray],
                 meta: tp.Optional[dict] = None) -> None:
    """Write ``arrays`` and ``meta`` atomically (temp file, then rename)."""
    if _META_KEY in arrays:
        raise FormatError(f"{_META_KEY!r} is reserved")
    header = {"format": FORMAT, "version": VERSION, **(meta or {})}
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    payload[_META_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_archive(path: tp.Union[str, os.PathLike]) -> tp.Tuple[tp.Dict[str, np.ndarray], dict]:
    try:
        with np.load(os.fspath(path), allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read archive {path}: {exc}") from exc
    if _META_KEY not in arrays:
        raise FormatError(f"{path} has no metadata entry")
    meta = json.loads(arrays.pop(_META_KEY).tobytes().decode())
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise FormatError(f"{path} is not a {FORMAT} v{VERSION} archive")
    return arrays, meta
