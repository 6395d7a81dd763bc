"""Preconditioned denoiser: synthesis ∘ U-Net ∘ analysis in the CQT domain.

The raw network sees the complex CQT packed as two real channels plus fixed
random-Fourier positional channels along frequency. Each residual block is
FiLM-conditioned on the noise-level embedding and runs a stack of
exponentially dilated frequency convolutions with GELU activations; the
U-Net halves only the time axis (anti-aliased) per level. The wrapper adds
the skip/output/input scalings keeping everything near unit variance, so a
zero-initialized network denoises to ``c_skip(sigma) * x`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cqt as cqt_mod
from .autodiff import Node, ParamStore

__all__ = [
    "DenoiserConfig",
    "Denoiser",
    "c_in",
    "c_skip",
    "c_out",
    "init_params",
]


@dataclass(frozen=True)
class DenoiserConfig:
    depth: int = 3
    base_channels: int = 32
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    kernel_size: int = 3
    rff_features: int = 32
    embed_dim: int = 128
    pos_channels: int = 8
    cqt: cqt_mod.CqtConfig = field(default_factory=cqt_mod.CqtConfig)

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ValueError("dilations must be strictly increasing")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.pos_channels % 2 != 0:
            raise ValueError("pos_channels must be even")
        self.cqt.validate()

    def to_dict(self) -> dict:
        d = {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "dilations": list(self.dilations),
            "kernel_size": self.kernel_size,
            "rff_features": self.rff_features,
            "embed_dim": self.embed_dim,
            "pos_channels": self.pos_channels,
            "cqt": {
                "bins_per_octave": self.cqt.bins_per_octave,
                "octaves": self.cqt.octaves,
                "sample_rate_hz": self.cqt.sample_rate_hz,
                "f_min_hz": self.cqt.f_min_hz,
                "window_kind": self.cqt.window_kind,
            },
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        cq = d["cqt"]
        return cls(
            depth=int(d["depth"]),
            base_channels=int(d["base_channels"]),
            dilations=tuple(int(x) for x in d["dilations"]),
            kernel_size=int(d["kernel_size"]),
            rff_features=int(d["rff_features"]),
            embed_dim=int(d["embed_dim"]),
            pos_channels=int(d["pos_channels"]),
            cqt=cqt_mod.CqtConfig(
                bins_per_octave=int(cq["bins_per_octave"]),
                octaves=int(cq["octaves"]),
                sample_rate_hz=float(cq["sample_rate_hz"]),
                f_min_hz=None if cq["f_min_hz"] is None else float(cq["f_min_hz"]),
                window_kind=cq["window_kind"],
            ),
        )


def c_in(sigma: float, sigma_data: float) -> float:
    return 1.0 / np.sqrt(sigma**2 + sigma_data**2)


def c_skip(sigma: float, sigma_data: float) -> float:
    return sigma_data**2 / (sigma**2 + sigma_data**2)


def c_out(sigma: float, sigma_data: float) -> float:
    return sigma * sigma_data / np.sqrt(sigma**2 + sigma_data**2)


def _block_names(config: DenoiserConfig) -> list[str]:
    names = [f"enc{l}" for l in range(config.depth)]
    names.append("mid")
    names += [f"dec{l}" for l in reversed(range(config.depth))]
    return names


# Parameters held fixed during training (random feature frequencies).
FROZEN = ("rff_freq", "pos_freq")


def init_params(config: DenoiserConfig, seed: int = 0) -> ParamStore:
    config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    C, K, E = config.base_channels, config.kernel_size, config.embed_dim

    store.register("rff_freq", rng.standard_normal(config.rff_features) * 2.0)
    store.register("pos_freq", rng.standard_normal(config.pos_channels // 2) * 8.0)

    n_rff = 2 * config.rff_features
    store.register("emb_w1", rng.standard_normal((E, n_rff)) / np.sqrt(n_rff))
    store.register("emb_b1", np.zeros(E))
    store.register("emb_w2", rng.standard_normal((E, E)) / np.sqrt(E))
    store.register("emb_b2", np.zeros(E))

    in_ch = 2 + config.pos_channels
    store.register("conv_in", rng.standard_normal((C, in_ch, K)) / np.sqrt(in_ch * K))
    for blk in _block_names(config):
        store.register(f"{blk}.film_w", np.zeros((2 * C, E)))
        store.register(f"{blk}.film_b", np.zeros(2 * C))
        for j in range(len(config.dilations)):
            store.register(
                f"{blk}.conv{j}", rng.standard_normal((C, C, K)) / np.sqrt(C * K)
            )
    # Zero-initialized output projection: the fresh model is exactly c_skip * x.
    store.register("conv_out", np.zeros((2, C, K)))
    return store


class Denoiser:
    """Bundles config, parameters, sigma_data and a per-length plan cache."""

    def __init__(
        self,
        config: DenoiserConfig,
        sigma_data: float,
        params: ParamStore | None = None,
        seed: int = 0,
    ):
        config.validate()
        if not np.isfinite(sigma_data) or sigma_data <= 0:
            raise ValueError("sigma_data must be finite and positive")
        self.config = config
        self.sigma_data = float(sigma_data)
        self.params = params if params is not None else init_params(config, seed)
        self.aa_kernel = ad.anti_alias_kernel()
        self._plans: dict[int, cqt_mod.CqtPlan] = {}

    def plan_for(self, signal_len: int) -> cqt_mod.CqtPlan:
        plan = self._plans.get(signal_len)
        if plan is None:
            plan = cqt_mod.build_plan(self.config.cqt, signal_len)
            if plan.n_frames % (2**self.config.depth) != 0:
                raise ValueError(
                    f"{plan.n_frames} raster frames not divisible by 2^depth"
                )
            self._plans[signal_len] = plan
        return plan

    def param_nodes(self) -> dict[str, Node]:
        return {name: ad.leaf(arr) for name, arr in self.params.params.items()}

    # -- noise-level embedding ------------------------------------------------

    def noise_embed_node(self, sigma: float, pn: dict[str, Node]) -> Node:
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        c_noise = 0.25 * np.log(sigma)
        freqs = self.params["rff_freq"]
        phase = 2.0 * np.pi * freqs * c_noise
        rff = ad.constant(np.concatenate([np.cos(phase), np.sin(phase)]))
        h = ad.gelu(ad.linear(rff, pn["emb_w1"], pn["emb_b1"]))
        return ad.linear(h, pn["emb_w2"], pn["emb_b2"])

    def noise_embed(self, sigma: float) -> np.ndarray:
        return self.noise_embed_node(sigma, self.param_nodes()).value

    # -- raw U-Net ------------------------------------------------------------

    def _pos_embedding(self, n_bands: int, n_frames: int) -> np.ndarray:
        freqs = self.params["pos_freq"]
        fnorm = np.arange(n_bands) / max(n_bands - 1, 1)
        phase = 2.0 * np.pi * np.outer(freqs, fnorm)  # (P/2, F)
        pe = np.concatenate([np.cos(phase), np.sin(phase)])  # (P, F)
        return np.broadcast_to(pe[:, :, None], (pe.shape[0], n_bands, n_frames)).copy()

    def _rblock(self, h: Node, emb: Node, blk: str, pn: dict[str, Node]) -> Node:
        C = self.config.base_channels
        fv = ad.linear(emb, pn[f"{blk}.film_w"], pn[f"{blk}.film_b"])
        delta = Node(fv.value[:C], (fv,), lambda g: (np.concatenate([g, np.zeros(C)]),))
        shift = Node(fv.value[C:], (fv,), lambda g: (np.concatenate([np.zeros(C), g]),))
        h = ad.film(h, delta, shift)
        for j, d in enumerate(self.config.dilations):
            h = ad.add(h, ad.conv1d_freq(ad.gelu(h), pn[f"{blk}.conv{j}"], dilation=d))
        return h

    def f_raw_node(
        self,
        spec: Node,
        emb: Node,
        pn: dict[str, Node],
        with_pos_embedding: bool = True,
    ) -> Node:
        _, n_bands, n_frames = spec.value.shape
        if n_frames % (2**self.config.depth) != 0:
            raise ValueError("frame count not divisible by 2^depth")
        pe = self._pos_embedding(n_bands, n_frames)
        if not with_pos_embedding:
            pe = np.zeros_like(pe)
        h = ad.conv1d_freq(ad.concat_channels(spec, ad.constant(pe)), pn["conv_in"])
        skips = []
        for l in range(self.config.depth):
            h = self._rblock(h, emb, f"enc{l}", pn)
            skips.append(h)
            h = ad.downsample_time(h, self.aa_kernel)
        h = self._rblock(h, emb, "mid", pn)
        for l in reversed(range(self.config.depth)):
            h = ad.upsample_time(h, self.aa_kernel)
            h = ad.add(h, skips[l])
            h = self._rblock(h, emb, f"dec{l}", pn)
        return ad.conv1d_freq(h, pn["conv_out"])

    def f_raw(self, spec: np.ndarray, sigma: float) -> np.ndarray:
        pn = self.param_nodes()
        emb = self.noise_embed_node(sigma, pn)
        return self.f_raw_node(ad.constant(spec), emb, pn).value

    # -- preconditioned denoiser ----------------------------------------------

    def denoise_node(
        self, x: Node, sigma: float, pn: dict[str, Node], plan: cqt_mod.CqtPlan
    ) -> Node:
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        sd = self.sigma_data
        emb = self.noise_embed_node(sigma, pn)
        spec = ad.cqt_analysis(ad.scale(x, c_in(sigma, sd)), plan)
        raw = self.f_raw_node(spec, emb, pn)
        synth = ad.cqt_synthesis(raw, plan)
        return ad.add(ad.scale(x, c_skip(sigma, sd)), ad.scale(synth, c_out(sigma, sd)))

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        plan = self.plan_for(len(x))
        return self.denoise_node(ad.leaf(x), sigma, self.param_nodes(), plan).value

    def grads_from(self, pn: dict[str, Node]) -> dict[str, np.ndarray]:
        """Collect parameter gradients after a backward pass (zeros if unused)."""
        return {
            name: (node.grad if node.grad is not None else np.zeros_like(node.value))
            for name, node in pn.items()
        }
