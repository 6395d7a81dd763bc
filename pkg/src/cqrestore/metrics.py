"""Objective metrics: log-spectral distance and signal-to-distortion ratio."""

from __future__ import annotations

import numpy as np

__all__ = ["lsd", "sdr", "LSD_N_FFT", "LSD_HOP", "POWER_FLOOR"]

LSD_N_FFT = 1024
LSD_HOP = 256
POWER_FLOOR = 1e-10


def _log_power_frames(x: np.ndarray) -> np.ndarray:
    """Frames x frequency matrix of base-10 log power, Hann window."""
    win = np.hanning(LSD_N_FFT)
    n = len(x)
    if n < LSD_N_FFT:
        raise ValueError(f"signal shorter than the {LSD_N_FFT}-sample LSD window")
    starts = range(0, n - LSD_N_FFT + 1, LSD_HOP)
    frames = np.stack([x[s : s + LSD_N_FFT] * win for s in starts])
    spec = np.fft.rfft(frames, axis=-1)
    power = np.maximum(np.abs(spec) ** 2, POWER_FLOOR)
    return np.log10(power)


def lsd(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over frames of the RMS over bins of the log-power difference."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError("length mismatch")
    diff = _log_power_frames(reference) - _log_power_frames(estimate)
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=-1))))


def sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10 log10(||ref||^2 / ||ref - est||^2); +inf when the estimate is exact."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError("length mismatch")
    ref_energy = float(np.sum(reference**2))
    if ref_energy == 0.0:
        raise ValueError("reference is all zeros")
    err_energy = float(np.sum((reference - estimate) ** 2))
    if err_energy == 0.0:
        return float("inf")
    return 10.0 * np.log10(ref_energy / err_energy)
