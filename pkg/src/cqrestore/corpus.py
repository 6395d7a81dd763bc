"""Synthetic harmonic training corpus (decaying struck tones)."""

from __future__ import annotations

import numpy as np

from .audio_io import AudioSegment, DEFAULT_RATE

__all__ = ["gen_synthetic_corpus", "synth_tone"]

F0_RANGE = (100.0, 2000.0)
HARMONICS_RANGE = (4, 10)
PEAK = 0.95


def synth_tone(rng: np.random.Generator, duration_s: float,
               sample_rate_hz: int = DEFAULT_RATE) -> np.ndarray:
    """One random harmonic tone: log-uniform fundamental, 1/h partial decay,
    exponential amplitude envelope, random onset, peak-normalized."""
    n = int(round(duration_s * sample_rate_hz))
    f0 = np.exp(rng.uniform(np.log(F0_RANGE[0]), np.log(F0_RANGE[1])))
    n_harm = int(rng.integers(HARMONICS_RANGE[0], HARMONICS_RANGE[1] + 1))
    onset = int(rng.uniform(0.0, 0.25) * n)
    tau = rng.uniform(0.2, 1.0) * duration_s
    t = np.arange(n - onset) / sample_rate_hz
    env = np.exp(-t / tau)
    x = np.zeros(n)
    nyq = sample_rate_hz / 2.0
    for h in range(1, n_harm + 1):
        f = h * f0
        if f >= nyq:
            break
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x[onset:] += (1.0 / h) * env * np.sin(2.0 * np.pi * f * t + phase)
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= PEAK / peak
    return x


def gen_synthetic_corpus(
    seed: int, n_items: int, duration_s: float,
    sample_rate_hz: int = DEFAULT_RATE,
) -> list[AudioSegment]:
    """Deterministic list of harmonic tones; per-item independent streams so
    the corpus is stable under reordering or partial generation."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(n_items)
    return [
        AudioSegment(synth_tone(np.random.default_rng(s), duration_s, sample_rate_hz),
                     sample_rate_hz)
        for s in streams
    ]
