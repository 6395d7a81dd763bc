"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for the denoiser, the CQT sandwich and the degradation
operators: a taped :class:`Node` per primitive, one backward pass per graph,
and a flat :class:`ParamStore` with an Adam update. Complex spectrogram
coefficients travel through the graph packed as two real channels, so every
node value is a real ndarray and every backward rule is an exact VJP under
the ordinary real inner product.
"""

from __future__ import annotations

import io
import struct
from typing import Callable

import numpy as np
from scipy.special import erf

from . import cqt as cqt_mod

__all__ = [
    "Node",
    "ParamStore",
    "backward",
    "constant",
    "leaf",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "linear",
    "gelu",
    "film",
    "concat_channels",
    "conv1d_freq",
    "downsample_time",
    "upsample_time",
    "anti_alias_kernel",
    "cqt_analysis",
    "cqt_synthesis",
    "complex_pack",
    "complex_unpack",
    "clip_hard",
    "mask_mul",
    "fir_same",
    "sum_squares",
    "adam_step",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Node:
    """One taped value. ``_vjp`` maps the incoming gradient to parent grads."""

    __slots__ = ("value", "parents", "_vjp", "grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Node", ...] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.value = np.asarray(value)
        self.parents = parents
        self._vjp = vjp
        self.grad: np.ndarray | None = None


def leaf(value: np.ndarray) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def constant(value: np.ndarray) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def _topo(output: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Node, seed: np.ndarray) -> None:
    """Accumulate d<seed, output>/d(node) into ``.grad`` of every graph node."""
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.value.shape:
        raise ValueError(f"seed shape {seed.shape} != output shape {output.value.shape}")
    order = _topo(output)
    for node in order:
        node.grad = None
    output.grad = seed
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Node, b: Node) -> Node:
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def neg(a: Node) -> Node:
    return Node(-a.value, (a,), lambda g: (-g,))


def sub(a: Node, b: Node) -> Node:
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return Node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a: Node, alpha: float) -> Node:
    alpha = float(alpha)
    return Node(a.value * alpha, (a,), lambda g: (g * alpha,))


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 2-D @ (1|2)-D only")

    def vjp(g):
        if bv.ndim == 1:
            return (np.outer(g, bv), av.T @ g)
        return (g @ bv.T, av.T @ g)

    return Node(av @ bv, (a, b), vjp)


def linear(x: Node, w: Node, b: Node) -> Node:
    """Dense layer ``w @ x + b`` for 1-D ``x``."""
    xv, wv = x.value, w.value
    return Node(
        wv @ xv + b.value,
        (x, w, b),
        lambda g: (wv.T @ g, np.outer(g, xv), g),
    )


def gelu(x: Node) -> Node:
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv / _SQRT2))

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return Node(xv * cdf, (x,), vjp)


def film(x: Node, delta_scale: Node, shift: Node) -> Node:
    """Per-channel (1 + delta) * x + shift for x of shape (C, F, T)."""
    xv = x.value
    s = delta_scale.value[:, None, None]

    def vjp(g):
        return (
            g * (1.0 + s),
            np.sum(g * xv, axis=(1, 2)),
            np.sum(g, axis=(1, 2)),
        )

    return Node(xv * (1.0 + s) + shift.value[:, None, None], (x, delta_scale, shift), vjp)


def concat_channels(a: Node, b: Node) -> Node:
    ca = a.value.shape[0]

    def vjp(g):
        return (g[:ca], g[ca:])

    return Node(np.concatenate([a.value, b.value], axis=0), (a, b), vjp)


def conv1d_freq(x: Node, w: Node, dilation: int = 1) -> Node:
    """Dilated conv along the frequency axis, zero-padded 'same', no bias.

    x: (C_in, F, T); w: (C_out, C_in, K) with odd K.
    """
    xv, wv = x.value, w.value
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    c_out, c_in, ktaps = wv.shape
    if ktaps % 2 != 1:
        raise ValueError("kernel size must be odd")
    if xv.ndim != 3 or xv.shape[0] != c_in:
        raise ValueError(f"input shape {xv.shape} incompatible with kernel {wv.shape}")
    _, F, T = xv.shape
    half = (ktaps // 2) * dilation
    xp = np.zeros((c_in, F + 2 * half, T))
    xp[:, half : half + F] = xv
    # (K, C_in, F, T) stack of dilated shifts
    stack = np.stack([xp[:, j * dilation : j * dilation + F] for j in range(ktaps)])
    out = np.einsum("oik,kift->oft", wv, stack, optimize=True)

    def vjp(g):
        gw = np.einsum("oft,kift->oik", g, stack, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(ktaps):
            gxp[:, j * dilation : j * dilation + F] += np.einsum(
                "oi,oft->ift", wv[:, :, j], g, optimize=True
            )
        return (gxp[:, half : half + F], gw)

    return Node(out, (x, w), vjp)


def anti_alias_kernel(taps: int = 17, beta: float = 6.0) -> np.ndarray:
    """Kaiser-windowed half-band lowpass used by the resampling primitives."""
    n = np.arange(taps) - (taps - 1) / 2.0
    h = 0.5 * np.sinc(0.5 * n) * np.kaiser(taps, beta)
    return h / h.sum()


def _fir_time(x: np.ndarray, k: np.ndarray, origin: int) -> np.ndarray:
    """Zero-padded correlation along the last axis: y[t] = sum_j k[j] x[t+j-origin]."""
    taps = len(k)
    T = x.shape[-1]
    pad_l, pad_r = origin, taps - 1 - origin
    xp = np.concatenate(
        [np.zeros(x.shape[:-1] + (pad_l,)), x, np.zeros(x.shape[:-1] + (pad_r,))],
        axis=-1,
    )
    out = np.zeros_like(x)
    for j in range(taps):
        out += k[j] * xp[..., j : j + T]
    return out


def fir_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Centered zero-padded FIR (odd-length kernels)."""
    return _fir_time(x, k, (len(k) - 1) // 2)


def _fir_same_adjoint(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    return _fir_time(x, k[::-1], len(k) - 1 - (len(k) - 1) // 2)


def downsample_time(x: Node, kernel: np.ndarray) -> Node:
    """Anti-aliased decimation by 2 along the last axis."""
    xv = x.value
    if xv.shape[-1] % 2 != 0:
        raise ValueError("time length must be even for downsampling")

    def vjp(g):
        up = np.zeros(g.shape[:-1] + (g.shape[-1] * 2,))
        up[..., ::2] = g
        return (_fir_same_adjoint(up, kernel),)

    return Node(fir_same(xv, kernel)[..., ::2], (x,), vjp)


def upsample_time(x: Node, kernel: np.ndarray) -> Node:
    """Zero-insertion upsampling by 2 followed by the anti-alias lowpass."""
    xv = x.value
    up = np.zeros(xv.shape[:-1] + (xv.shape[-1] * 2,))
    up[..., ::2] = xv

    def vjp(g):
        return (2.0 * _fir_same_adjoint(g, kernel)[..., ::2],)

    return Node(2.0 * fir_same(up, kernel), (x,), vjp)


def complex_pack(S: np.ndarray) -> np.ndarray:
    """complex (F, T) -> real (2, F, T)."""
    return np.stack([S.real, S.imag])


def complex_unpack(a: np.ndarray) -> np.ndarray:
    return a[0] + 1j * a[1]


def cqt_analysis(x: Node, plan: cqt_mod.CqtPlan) -> Node:
    """CQT forward as a graph primitive; value is the 2-real-channel packing."""

    def vjp(g):
        return (cqt_mod.adjoint_forward(plan, complex_unpack(g)),)

    return Node(complex_pack(cqt_mod.forward(plan, x.value)), (x,), vjp)


def cqt_synthesis(s: Node, plan: cqt_mod.CqtPlan) -> Node:
    """Dual-frame synthesis as a graph primitive; input is 2-real-channel."""

    def vjp(g):
        return (complex_pack(cqt_mod.adjoint_inverse(plan, g)),)

    return Node(cqt_mod.inverse(plan, complex_unpack(s.value)), (s,), vjp)


def clip_hard(x: Node, c: float) -> Node:
    """Hard clip to [-c, c]; a.e. derivative, subgradient 0 at |x| = c."""
    xv = x.value
    inside = np.abs(xv) < c
    return Node(np.clip(xv, -c, c), (x,), lambda g: (g * inside,))


def mask_mul(x: Node, mask: np.ndarray) -> Node:
    return Node(x.value * mask, (x,), lambda g: (g * mask,))


def fir_node(x: Node, kernel: np.ndarray) -> Node:
    """Centered FIR filtering as a linear graph primitive."""
    return Node(
        fir_same(x.value, kernel),
        (x,),
        lambda g: (_fir_same_adjoint(g, kernel),),
    )


def sum_squares(x: Node) -> Node:
    xv = x.value
    return Node(
        np.asarray(np.sum(xv * xv)),
        (x,),
        lambda g: (2.0 * float(g) * xv,),
    )


class ParamStore:
    """Named parameter arrays plus Adam moment accumulators.

    Shapes are frozen at registration; ``snapshot`` returns an immutable-by-
    convention copy safe to share across parallel samplers.
    """

    MAGIC = b"CQRPS001"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def register(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name: {name}")
        arr = np.asarray(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def snapshot(self) -> "ParamStore":
        out = ParamStore()
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.step = self.step
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(self.MAGIC)
        buf.write(struct.pack("<QI", self.step, len(self.params)))
        for name, arr in self.params.items():
            nb = name.encode("utf-8")
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            for a in (arr, self.m[name], self.v[name]):
                buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        buf = io.BytesIO(blob)
        if buf.read(len(cls.MAGIC)) != cls.MAGIC:
            raise ValueError("bad ParamStore header")
        store = cls()
        step, count = struct.unpack("<QI", buf.read(12))
        store.step = step
        for _ in range(count):
            (nlen,) = struct.unpack("<H", buf.read(2))
            name = buf.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", buf.read(1))
            shape = struct.unpack(f"<{ndim}q", buf.read(8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            arrs = []
            for _ in range(3):
                raw = buf.read(8 * size)
                arrs.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            store.params[name] = arrs[0]
            store.m[name] = arrs[1]
            store.v[name] = arrs[2]
        return store


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float = 2e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, in place."""
    missing = set(store.params) - set(grads)
    if missing:
        raise KeyError(f"missing gradients for parameters: {sorted(missing)}")
    b1, b2 = betas
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        g = grads[name]
        store.m[name] = b1 * store.m[name] + (1 - b1) * g
        store.v[name] = b2 * store.v[name] + (1 - b2) * g * g
        m_hat = store.m[name] / (1 - b1**t)
        v_hat = store.v[name] / (1 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
