"""Noise schedule, training objective, stochastic sampler and conditioning.

Sampling follows the second-order (Heun) stochastic scheme with per-step
noise churn; the noise level is identified with the integration time
(sigma_t = t). Conditioning on observations is applied inside every step,
either by replacing the consistent part of the internal clean-signal
prediction (data consistency, linear degradations only), by adding the
scaled gradient of the measurement misfit through the denoiser and the
degradation (reconstruction guidance), or both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import degrade
from .denoiser import Denoiser

__all__ = [
    "NoiseSchedule",
    "SamplerConfig",
    "GuidanceConfig",
    "NumericalFailure",
    "SAMPLING_SCHEDULE",
    "TRAINING_SCHEDULE",
    "DECLIP_STEPS",
    "schedule_times",
    "sigma_from_uniform",
    "perturb",
    "loss_weight",
    "training_loss",
    "score_from_denoiser",
    "dc_replace",
    "rg_gradient",
    "sample",
    "estimate_sigma_data",
]


class NumericalFailure(RuntimeError):
    """Sampler or training state became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float
    sigma_max: float
    rho: float
    steps: int

    def validate(self) -> None:
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.steps < 2:
            raise ValueError("need at least 2 steps")


SAMPLING_SCHEDULE = NoiseSchedule(sigma_min=1e-4, sigma_max=1.0, rho=13.0, steps=35)
TRAINING_SCHEDULE = NoiseSchedule(sigma_min=1e-6, sigma_max=10.0, rho=10.0, steps=2)
DECLIP_STEPS = 140


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule = SAMPLING_SCHEDULE
    s_churn: float = 5.0
    s_noise: float = 1.0
    s_tmin: float = 0.0
    s_tmax: float = math.inf
    seed: int = 0

    def validate(self) -> None:
        self.schedule.validate()
        if self.s_churn < 0:
            raise ValueError("s_churn must be >= 0")
        if self.s_noise <= 0:
            raise ValueError("s_noise must be positive")


@dataclass(frozen=True)
class GuidanceConfig:
    """mode: 'none' | 'dc' | 'rg' | 'dc+rg'. xi_prime = 0 reduces RG to
    unconditional sampling. ``xi_norm`` selects the ||G||^2 (as adopted) or
    ||G|| denominator in the guidance scaling."""

    mode: str = "none"
    xi_prime: float = 0.0
    degradation: degrade.DegradationSpec | None = None
    observations: np.ndarray | None = None
    xi_norm: str = "squared"

    @property
    def uses_dc(self) -> bool:
        return self.mode in ("dc", "dc+rg")

    @property
    def uses_rg(self) -> bool:
        return self.mode in ("rg", "dc+rg")

    def validate(self, n_samples: int | None = None) -> None:
        if self.mode not in ("none", "dc", "rg", "dc+rg"):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.xi_prime < 0:
            raise ValueError("xi_prime must be >= 0")
        if self.xi_norm not in ("squared", "norm"):
            raise ValueError("xi_norm must be 'squared' or 'norm'")
        if self.mode == "none":
            return
        if self.degradation is None or self.observations is None:
            raise ValueError("conditioning requires a degradation and observations")
        if self.uses_dc and not self.degradation.linear:
            raise ValueError(
                "data consistency unavailable for nonlinear degradation"
            )
        if n_samples is not None and len(self.observations) != n_samples:
            raise ValueError("observation length does not match the sample length")


def schedule_times(s: NoiseSchedule) -> np.ndarray:
    """Strictly decreasing sigma levels, endpoints exact, terminal 0 appended."""
    s.validate()
    i = np.arange(s.steps)
    inv = 1.0 / s.rho
    t = (s.sigma_max**inv + i / (s.steps - 1) * (s.sigma_min**inv - s.sigma_max**inv)) ** s.rho
    t[0] = s.sigma_max
    t[-1] = s.sigma_min
    return np.concatenate([t, [0.0]])


def sigma_from_uniform(u: float | np.ndarray, s: NoiseSchedule) -> float | np.ndarray:
    """Continuous version of the schedule: u in [0, 1] -> sigma."""
    inv = 1.0 / s.rho
    return (s.sigma_max**inv + u * (s.sigma_min**inv - s.sigma_max**inv)) ** s.rho


def perturb(x0: np.ndarray, sigma: float, eps: np.ndarray) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return np.asarray(x0, dtype=np.float64) + sigma * np.asarray(eps, dtype=np.float64)


def loss_weight(sigma: float, sigma_data: float) -> float:
    """lambda(sigma) = 1 / c_out(sigma)^2."""
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def training_loss(
    batch: list[np.ndarray],
    model: Denoiser,
    schedule: NoiseSchedule = TRAINING_SCHEDULE,
    rng: np.random.Generator | None = None,
    compute_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Denoising score-matching objective; mean over the batch of
    lambda(sigma) * ||D(x + sigma*eps, sigma) - x||^2, with sigma drawn by
    pushing a uniform variate through the schedule. Returns (loss, grads)."""
    if not batch:
        raise ValueError("empty batch")
    if rng is None:
        rng = np.random.default_rng()
    n_batch = len(batch)
    total = 0.0
    grads: dict[str, np.ndarray] = {
        name: np.zeros_like(arr) for name, arr in model.params.params.items()
    }
    for x in batch:
        x = np.asarray(x, dtype=np.float64)
        sigma = float(sigma_from_uniform(rng.uniform(), schedule))
        x_t = perturb(x, sigma, rng.standard_normal(len(x)))
        lam = loss_weight(sigma, model.sigma_data)
        pn = model.param_nodes()
        plan = model.plan_for(len(x))
        out = model.denoise_node(ad.constant(x_t), sigma, pn, plan)
        sq = ad.sum_squares(ad.sub(out, ad.constant(x)))
        total += lam * float(sq.value) / n_batch
        if compute_grads:
            ad.backward(sq, np.asarray(lam / n_batch))
            for name, node in pn.items():
                if node.grad is not None:
                    grads[name] += node.grad
    if not np.isfinite(total):
        raise NumericalFailure("non-finite training loss")
    return total, grads


def score_from_denoiser(model, x_t: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return (model.denoise(x_t, sigma) - x_t) / sigma**2


def _bind_op(guidance: GuidanceConfig, sample_rate_hz: float, n: int):
    return degrade.DegradationOp(guidance.degradation, sample_rate_hz, n)


def dc_replace(
    x0_hat: np.ndarray, guidance: GuidanceConfig, op: degrade.DegradationOp
) -> np.ndarray:
    """Replace the observed part of the internal prediction with y."""
    if not guidance.uses_dc:
        raise ValueError("dc_replace called without DC in the guidance mode")
    guidance.validate(len(x0_hat))
    y = np.asarray(guidance.observations, dtype=np.float64)
    if isinstance(guidance.degradation, degrade.Lowpass):
        return y + x0_hat - op(x0_hat)
    if isinstance(guidance.degradation, degrade.Mask):
        gap = 1.0 - op.keep
        return y + gap * x0_hat
    raise ValueError("data consistency unavailable for nonlinear degradation")


def rg_gradient(
    model: Denoiser,
    x_t: np.ndarray,
    sigma: float,
    guidance: GuidanceConfig,
    op: degrade.DegradationOp | None = None,
) -> np.ndarray:
    """xi(t) * grad_x ||y - A(D(x, sigma))||^2, the additive guidance term.

    xi(t) = xi' * sqrt(N) / (t ||G||^2) as adopted (or ||G|| with
    xi_norm='norm'). Returns zeros when the prediction is already consistent.
    """
    if not guidance.uses_rg:
        raise ValueError("rg_gradient called without RG in the guidance mode")
    guidance.validate(len(x_t))
    if op is None:
        op = _bind_op(guidance, model.config.cqt.sample_rate_hz, len(x_t))
    x_node = ad.leaf(np.asarray(x_t, dtype=np.float64))
    pn = model.param_nodes()
    plan = model.plan_for(len(x_t))
    pred = model.denoise_node(x_node, sigma, pn, plan)
    resid = ad.sub(ad.constant(guidance.observations), op.node(pred))
    ad.backward(ad.sum_squares(resid), np.asarray(1.0))
    G = x_node.grad
    if G is None:
        return np.zeros_like(x_t)
    if not np.all(np.isfinite(G)):
        raise NumericalFailure("non-finite reconstruction-guidance gradient")
    norm_sq = float(np.sum(G * G))
    if norm_sq == 0.0:
        return np.zeros_like(G)
    denom = norm_sq if guidance.xi_norm == "squared" else math.sqrt(norm_sq)
    xi = guidance.xi_prime * math.sqrt(len(x_t)) / (sigma * denom)
    return xi * G


def _step_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, step): order-independent."""
    return np.random.Generator(
        np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, step], dtype=np.uint64))
    )


def sample(
    model,
    config: SamplerConfig,
    guidance: GuidanceConfig,
    length: int,
    sample_rate_hz: float | None = None,
) -> np.ndarray:
    """Draw one segment by integrating the reverse process from sigma_max.

    ``model`` needs ``denoise(x, sigma)``; reconstruction guidance
    additionally needs the graph entry points of :class:`Denoiser`.
    Deterministic given ``config.seed``.
    """
    config.validate()
    guidance.validate(length)
    if sample_rate_hz is None:
        sample_rate_hz = getattr(
            getattr(getattr(model, "config", None), "cqt", None), "sample_rate_hz", 22050.0
        )
    op = None
    if guidance.mode != "none":
        op = _bind_op(guidance, sample_rate_hz, length)

    ts = schedule_times(config.schedule)
    T = config.schedule.steps
    x = ts[0] * _step_rng(config.seed, 0).standard_normal(length)

    def slope(xc: np.ndarray, t: float) -> np.ndarray:
        x0 = model.denoise(xc, t)
        if guidance.uses_dc:
            x0 = dc_replace(x0, guidance, op)
        d = (xc - x0) / t
        if guidance.uses_rg:
            d = d + t * rg_gradient(model, xc, t, guidance, op)
        return d

    gamma_cap = math.sqrt(2.0) - 1.0
    for i in range(T):
        t, t_next = float(ts[i]), float(ts[i + 1])
        gamma = 0.0
        if config.s_churn > 0 and config.s_tmin <= t <= config.s_tmax:
            gamma = min(config.s_churn / T, gamma_cap)
        t_hat = t * (1.0 + gamma)
        if gamma > 0:
            eps = _step_rng(config.seed, i + 1).standard_normal(length)
            x = x + math.sqrt(t_hat**2 - t**2) * config.s_noise * eps
        d = slope(x, t_hat)
        x_next = x + (t_next - t_hat) * d
        if t_next > 0:
            d_next = slope(x_next, t_next)
            x_next = x + (t_next - t_hat) * 0.5 * (d + d_next)
        if not np.all(np.isfinite(x_next)):
            raise NumericalFailure("sampler state degenerated", step=i)
        x = x_next
    return x


def estimate_sigma_data(corpus) -> float:
    """Streaming (Welford) standard deviation over all samples of all items."""
    count = 0
    mean = 0.0
    m2 = 0.0
    for item in corpus:
        item = np.asarray(item, dtype=np.float64)
        n = item.size
        if n == 0:
            continue
        b_mean = float(item.mean())
        b_m2 = float(((item - b_mean) ** 2).sum())
        delta = b_mean - mean
        total = count + n
        mean += delta * n / total
        m2 += b_m2 + delta**2 * count * n / total
        count = total
    if count == 0:
        raise ValueError("empty corpus")
    sigma = math.sqrt(m2 / count)
    if sigma <= 0:
        raise ValueError("corpus has zero variance; sigma_data must be positive")
    return sigma
