"""WAV input/output and polyphase resampling to the working sample rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

__all__ = ["AudioSegment", "AudioIOError", "load_wav", "save_wav", "resample"]

DEFAULT_RATE = 22050


class AudioIOError(ValueError):
    """Malformed or unsupported audio file."""


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioIOError("AudioSegment holds mono 1-D sample arrays")
        if not np.all(np.isfinite(self.samples)):
            raise AudioIOError("non-finite samples")
        if self.sample_rate_hz <= 0:
            raise AudioIOError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Windowed-sinc polyphase resampling."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    g = math.gcd(rate_in, rate_out)
    return resample_poly(
        np.asarray(x, dtype=np.float64), rate_out // g, rate_in // g,
        window=("kaiser", 8.0),
    )


def load_wav(path, target_rate: int = DEFAULT_RATE) -> AudioSegment:
    """Decode PCM16/float32 WAV to floats in [-1, 1]; stereo is downmixed and
    other rates are resampled to ``target_rate``."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise AudioIOError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    else:
        raise AudioIOError(f"unsupported WAV sample format {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise AudioIOError(f"unsupported channel layout in {path}")
    if rate != target_rate:
        x = resample(x, int(rate), target_rate)
    return AudioSegment(x, target_rate)


def save_wav(segment: AudioSegment, path, fmt: str = "float32") -> None:
    if fmt == "float32":
        wavfile.write(path, segment.sample_rate_hz, segment.samples.astype(np.float32))
    elif fmt == "pcm16":
        scaled = np.clip(segment.samples, -1.0, 1.0) * 32767.0
        wavfile.write(path, segment.sample_rate_hz, np.round(scaled).astype(np.int16))
    else:
        raise AudioIOError(f"unsupported output format {fmt!r}")
