"""Degradation operators: Kaiser-FIR lowpass, gap mask, hard clip.

All three expose both a plain numpy application and a graph primitive with
an exact VJP, so reconstruction guidance can differentiate through them.
The lowpass and the mask are linear (the mask is an orthogonal projection);
the clip is differentiable almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin

from . import autodiff as ad
from .autodiff import Node

__all__ = [
    "Lowpass",
    "Mask",
    "Clip",
    "DegradationSpec",
    "kaiser_lowpass_kernel",
    "lpf_kaiser",
    "apply_mask",
    "gap_mask",
    "clip",
    "threshold_from_sdr",
    "spec_from_dict",
]

KAISER_BETA = 8.0  # ~80 dB stopband


@dataclass(frozen=True)
class Lowpass:
    cutoff_hz: float
    order: int = 500
    beta: float = KAISER_BETA

    kind = "lowpass"
    linear = True

    def validate(self, sample_rate_hz: float, n_samples: int) -> None:
        if not 0 < self.cutoff_hz < sample_rate_hz / 2:
            raise ValueError("cutoff must lie strictly inside (0, Nyquist)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cutoff_hz": self.cutoff_hz,
            "order": self.order,
            "beta": self.beta,
        }


@dataclass(frozen=True)
class Mask:
    t_start: float  # seconds
    t_end: float

    kind = "mask"
    linear = True

    def validate(self, sample_rate_hz: float, n_samples: int) -> None:
        if not 0 <= self.t_start < self.t_end <= n_samples / sample_rate_hz + 1e-9:
            raise ValueError("gap bounds must satisfy 0 <= start < end <= duration")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_start": self.t_start, "t_end": self.t_end}


@dataclass(frozen=True)
class Clip:
    threshold: float

    kind = "clip"
    linear = False

    def validate(self, sample_rate_hz: float, n_samples: int) -> None:
        if self.threshold <= 0:
            raise ValueError("clip threshold must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold}


DegradationSpec = Lowpass | Mask | Clip


def spec_from_dict(d: dict) -> DegradationSpec:
    kind = d["kind"]
    if kind == "lowpass":
        return Lowpass(float(d["cutoff_hz"]), int(d.get("order", 500)),
                       float(d.get("beta", KAISER_BETA)))
    if kind == "mask":
        return Mask(float(d["t_start"]), float(d["t_end"]))
    if kind == "clip":
        return Clip(float(d["threshold"]))
    raise ValueError(f"unknown degradation kind: {kind!r}")


def kaiser_lowpass_kernel(
    cutoff_hz: float, sample_rate_hz: float, order: int = 500, beta: float = KAISER_BETA
) -> np.ndarray:
    """Linear-phase FIR lowpass; odd length so 'same' filtering is zero-delay."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError("cutoff must lie strictly inside (0, Nyquist)")
    return firwin(order + 1, cutoff_hz, window=("kaiser", beta), fs=sample_rate_hz)


def lpf_kaiser(
    x: np.ndarray, cutoff_hz: float, sample_rate_hz: float,
    order: int = 500, beta: float = KAISER_BETA,
) -> np.ndarray:
    """Zero-padded, group-delay-compensated lowpass filtering."""
    k = kaiser_lowpass_kernel(cutoff_hz, sample_rate_hz, order, beta)
    return ad.fir_same(np.asarray(x, dtype=np.float64), k)


def gap_mask(n: int, t_start: float, t_end: float, sample_rate_hz: float) -> np.ndarray:
    """1.0 inside [t_start, t_end), else 0.0."""
    i0 = int(round(t_start * sample_rate_hz))
    i1 = int(round(t_end * sample_rate_hz))
    if not 0 <= i0 < i1 <= n:
        raise ValueError("gap bounds outside the segment")
    m = np.zeros(n)
    m[i0:i1] = 1.0
    return m


def apply_mask(x: np.ndarray, t_start: float, t_end: float, sample_rate_hz: float) -> np.ndarray:
    """Delete the segment between t_start and t_end (seconds)."""
    x = np.asarray(x, dtype=np.float64)
    return x * (1.0 - gap_mask(len(x), t_start, t_end, sample_rate_hz))


def clip(x: np.ndarray, c: float) -> np.ndarray:
    """Hard clip (|x+c| - |x-c|) / 2 == min(max(x, -c), c)."""
    if c <= 0:
        raise ValueError("clip threshold must be positive")
    x = np.asarray(x, dtype=np.float64)
    return (np.abs(x + c) - np.abs(x - c)) / 2.0


def threshold_from_sdr(
    x: np.ndarray, target_sdr_db: float, tol_db: float = 0.01
) -> float:
    """Clipping threshold c with SDR(x, clip(x, c)) == target, by bisection."""
    from .metrics import sdr

    x = np.asarray(x, dtype=np.float64)
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        raise ValueError("cannot clip an all-zero signal")
    lo, hi = peak * 1e-6, peak  # SDR(hi) = +inf, SDR monotone in c
    if sdr(x, clip(x, lo)) > target_sdr_db:
        raise ValueError("target SDR unreachable: signal barely clips")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = sdr(x, clip(x, mid))
        if abs(val - target_sdr_db) <= tol_db:
            return mid
        if val < target_sdr_db:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("bisection on the clip threshold did not converge")


class DegradationOp:
    """Callable degradation bound to a segment length and sample rate."""

    def __init__(self, spec: DegradationSpec, sample_rate_hz: float, n_samples: int):
        spec.validate(sample_rate_hz, n_samples)
        self.spec = spec
        self.sample_rate_hz = sample_rate_hz
        self.n_samples = n_samples
        if isinstance(spec, Lowpass):
            self.kernel = kaiser_lowpass_kernel(
                spec.cutoff_hz, sample_rate_hz, spec.order, spec.beta
            )
        elif isinstance(spec, Mask):
            self.keep = 1.0 - gap_mask(n_samples, spec.t_start, spec.t_end, sample_rate_hz)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.spec, Lowpass):
            return ad.fir_same(np.asarray(x, dtype=np.float64), self.kernel)
        if isinstance(self.spec, Mask):
            return np.asarray(x, dtype=np.float64) * self.keep
        return clip(x, self.spec.threshold)

    def node(self, x: Node) -> Node:
        if isinstance(self.spec, Lowpass):
            return ad.fir_node(x, self.kernel)
        if isinstance(self.spec, Mask):
            return ad.mask_mul(x, self.keep)
        return ad.clip_hard(x, self.spec.threshold)
