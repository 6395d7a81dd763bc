"""Invertible rasterized constant-Q transform built on painless Gabor frames.

The transform works entirely in the FFT domain: each band is a real,
compactly supported frequency window. Analysis multiplies the signal
spectrum by the window and takes a short inverse FFT on a common time grid
(the "rasterized" layout, one hop for all bands). Synthesis uses the dual
windows obtained from the diagonal frame operator, which gives exact
reconstruction whenever every window support fits inside the raster FFT
length (the painless condition) and the windows cover the whole spectrum.

Adjoints are defined with respect to the real inner product
``<A, B> = sum(Re A * Re B + Im A * Im B)`` on spectrograms and the
ordinary dot product on audio, i.e. the convention that treats a complex
coefficient as two real channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CqtConfig",
    "CqtPlan",
    "CqtError",
    "build_plan",
    "forward",
    "inverse",
    "adjoint_forward",
    "adjoint_inverse",
]


class CqtError(ValueError):
    """Invalid configuration or incompatible plan/signal."""


@dataclass(frozen=True)
class CqtConfig:
    bins_per_octave: int = 64
    octaves: int = 7
    sample_rate_hz: float = 22050.0
    f_min_hz: float | None = None  # default: (fs/2) / 2**octaves
    window_kind: str = "hann"

    def resolved_f_min(self) -> float:
        if self.f_min_hz is not None:
            return float(self.f_min_hz)
        return (self.sample_rate_hz / 2.0) / 2.0**self.octaves

    def validate(self) -> None:
        if self.bins_per_octave < 1 or self.octaves < 1:
            raise CqtError("bins_per_octave and octaves must be >= 1")
        if self.sample_rate_hz <= 0:
            raise CqtError("sample_rate_hz must be positive")
        if self.window_kind != "hann":
            raise CqtError(f"unsupported window kind: {self.window_kind!r}")
        f_min = self.resolved_f_min()
        if f_min <= 0:
            raise CqtError("f_min_hz must be positive")
        if f_min * 2.0**self.octaves > self.sample_rate_hz / 2.0 + 1e-9:
            raise CqtError("highest CQT band exceeds Nyquist")


@dataclass(frozen=True)
class CqtPlan:
    """Precomputed analysis/synthesis data for one signal length.

    Band 0 is the lowpass residual, bands 1..n_log are the log-spaced CQT
    bands, and the last band is the highpass residual, so the frame covers
    the full spectrum and reconstruction is exact.
    """

    config: CqtConfig
    signal_len: int
    raster_hop: int
    n_frames: int  # == signal_len // raster_hop, also the per-band FFT length
    band_count: int
    center_hz: np.ndarray  # per band, residuals included
    start_bins: np.ndarray  # first rfft bin of each band's support
    analysis_windows: tuple[np.ndarray, ...]  # real windows on the support
    dual_windows: tuple[np.ndarray, ...]
    raster_idx: tuple[np.ndarray, ...] = field(repr=False)  # support bins mod n_frames

    @property
    def n_log_bands(self) -> int:
        return self.band_count - 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.band_count, self.n_frames)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def build_plan(config: CqtConfig, signal_len: int) -> CqtPlan:
    """Construct windows, duals and the raster grid for ``signal_len`` samples."""
    config.validate()
    if not _is_pow2(signal_len):
        raise CqtError(f"signal_len must be a power of two, got {signal_len}")

    fs = config.sample_rate_hz
    bpo = config.bins_per_octave
    n_log = bpo * config.octaves
    f_min = config.resolved_f_min()
    df = fs / signal_len
    n_bins = signal_len // 2 + 1  # rfft bins

    centers = f_min * 2.0 ** (np.arange(n_log) / bpo)
    # Half-width reaching the geometric neighbours, at least one FFT bin.
    rel_half = (2.0 ** (1.0 / bpo) - 2.0 ** (-1.0 / bpo)) / 2.0
    half_bins = np.maximum(centers * rel_half / df, 1.0)
    center_bins = centers / df

    supports: list[tuple[int, np.ndarray]] = []

    # Lowpass residual: flat up to the first center, cosine rolloff above it.
    c0, h0 = center_bins[0], half_bins[0]
    hi = min(int(math.floor(c0 + h0)), n_bins - 1)
    k = np.arange(0, hi + 1, dtype=float)
    g = np.ones_like(k)
    roll = k > c0
    g[roll] = 0.5 * (1.0 + np.cos(np.pi * (k[roll] - c0) / h0))
    supports.append((0, g))

    for c, h in zip(center_bins, half_bins):
        lo = max(int(math.ceil(c - h)), 0)
        hi = min(int(math.floor(c + h)), n_bins - 1)
        if hi < lo:
            raise CqtError("empty band support; signal too short for this config")
        k = np.arange(lo, hi + 1, dtype=float)
        supports.append((lo, 0.5 * (1.0 + np.cos(np.pi * (k - c) / h))))

    # Highpass residual: cosine rise from the top center, flat to Nyquist.
    ct, ht = center_bins[-1], half_bins[-1]
    lo = max(int(math.ceil(ct - ht)), 0)
    k = np.arange(lo, n_bins, dtype=float)
    g = np.ones_like(k)
    rise = k < ct
    g[rise] = 0.5 * (1.0 + np.cos(np.pi * (k[rise] - ct) / ht))
    supports.append((lo, g))

    # Coverage check: the diagonal frame operator must be strictly positive.
    diag = np.zeros(n_bins)
    for lo, g in supports:
        diag[lo : lo + len(g)] += g * g
    if diag.min() <= 1e-12:
        raise CqtError("frame does not cover the spectrum (zero in frame diagonal)")

    max_support = max(len(g) for _, g in supports)
    n_frames = 1
    while n_frames < max_support:
        n_frames *= 2
    n_frames = min(max(n_frames, 2), signal_len)
    if signal_len % n_frames != 0:
        raise CqtError("signal_len not divisible by the computed raster hop")
    raster_hop = signal_len // n_frames
    if max_support > n_frames:
        raise CqtError("band support exceeds raster FFT length (painless violated)")

    duals, raster_idx, starts = [], [], []
    for lo, g in supports:
        duals.append(g / diag[lo : lo + len(g)])
        raster_idx.append((np.arange(lo, lo + len(g)) % n_frames).astype(np.intp))
        starts.append(lo)

    center_hz = np.concatenate(([0.0], centers, [fs / 2.0]))
    return CqtPlan(
        config=config,
        signal_len=signal_len,
        raster_hop=raster_hop,
        n_frames=n_frames,
        band_count=len(supports),
        center_hz=center_hz,
        start_bins=np.asarray(starts, dtype=np.intp),
        analysis_windows=tuple(np.ascontiguousarray(g) for _, g in supports),
        dual_windows=tuple(np.ascontiguousarray(gd) for gd in duals),
        raster_idx=tuple(raster_idx),
    )


def _check_signal(plan: CqtPlan, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or len(x) != plan.signal_len:
        raise CqtError(
            f"signal length {x.shape} incompatible with plan length {plan.signal_len}"
        )
    return x.astype(np.float64, copy=False)


def _check_coeffs(plan: CqtPlan, S: np.ndarray) -> np.ndarray:
    S = np.asarray(S)
    if S.shape != plan.shape:
        raise CqtError(f"coefficient shape {S.shape} != plan shape {plan.shape}")
    return S.astype(np.complex128, copy=False)


def forward(plan: CqtPlan, x: np.ndarray) -> np.ndarray:
    """Analysis: audio -> complex (band_count, n_frames) matrix."""
    x = _check_signal(plan, x)
    X = np.fft.rfft(x)
    A = np.zeros(plan.shape, dtype=np.complex128)
    for b, (lo, g, idx) in enumerate(
        zip(plan.start_bins, plan.analysis_windows, plan.raster_idx)
    ):
        A[b, idx] = X[lo : lo + len(g)] * g
    return np.fft.ifft(A, axis=-1)


def inverse(plan: CqtPlan, S: np.ndarray) -> np.ndarray:
    """Dual-frame synthesis: coefficients -> audio, exact on range(forward)."""
    S = _check_coeffs(plan, S)
    C = np.fft.fft(S, axis=-1)
    Y = np.zeros(plan.signal_len // 2 + 1, dtype=np.complex128)
    for b, (lo, gd, idx) in enumerate(
        zip(plan.start_bins, plan.dual_windows, plan.raster_idx)
    ):
        Y[lo : lo + len(gd)] += gd * C[b, idx]
    # Half-spectrum synthesis; imaginary parts of the DC/Nyquist bins have no
    # real-signal counterpart and are dropped (matches the adjoint convention).
    Y[0] = Y[0].real
    Y[-1] = Y[-1].real
    return np.fft.irfft(Y, n=plan.signal_len)


def adjoint_forward(plan: CqtPlan, S: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`forward` under the documented inner product."""
    S = _check_coeffs(plan, S)
    C = np.fft.fft(S, axis=-1) / plan.n_frames
    Y = np.zeros(plan.signal_len // 2 + 1, dtype=np.complex128)
    for b, (lo, g, idx) in enumerate(
        zip(plan.start_bins, plan.analysis_windows, plan.raster_idx)
    ):
        Y[lo : lo + len(g)] += g * C[b, idx]
    full = np.zeros(plan.signal_len, dtype=np.complex128)
    full[: len(Y)] = Y
    return plan.signal_len * np.fft.ifft(full).real


def adjoint_inverse(plan: CqtPlan, x: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`inverse`; audio -> complex coefficient matrix."""
    x = _check_signal(plan, x)
    Y = np.fft.rfft(x) / plan.signal_len
    Y[1:-1] *= 2.0  # interior rfft bins appear twice in the full spectrum
    A = np.zeros(plan.shape, dtype=np.complex128)
    for b, (lo, gd, idx) in enumerate(
        zip(plan.start_bins, plan.dual_windows, plan.raster_idx)
    ):
        A[b, idx] = gd * Y[lo : lo + len(gd)]
    return plan.n_frames * np.fft.ifft(A, axis=-1)
