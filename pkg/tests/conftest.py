import os
import typing as tp

import cv2
import numpy as np
import pytest

from videomusic.codec import Waveform, write_wav


def write_video(path, frames_rgb: np.ndarray, fps: float) -> str:
    """Write ``N x H x W x 3`` uint8 RGB frames as an MJPG AVI."""
    n, h, w, _ = frames_rgb.shape
    writer = cv2.VideoWriter(os.fspath(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    assert writer.isOpened()
    for f in frames_rgb:
        writer.write(cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
    writer.release()
    return os.fspath(path)


def gray_ramp_frames(n: int, size: int = 32, step: int = 2) -> np.ndarray:
    """Frame ``i`` is uniform gray level ``(step * i) % 256``."""
    levels = (step * np.arange(n)) % 256
    return np.broadcast_to(levels[:, None, None, None], (n, size, size, 3)).astype(np.uint8).copy()


def noise_frames(n: int, size: int = 32, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)


def tone(freq: float, seconds: float, sr: int = 32000, amp: float = 0.3, phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def write_tone(path, freq: float, seconds: float, sr: int = 32000, amp: float = 0.3) -> str:
    write_wav(path, tone(freq, seconds, sr, amp))
    return os.fspath(path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria: tp.Dict[int, tp.Tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria[number] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
