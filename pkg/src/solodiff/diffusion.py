"""Core DDPM mathematics: schedules, forward noising, losses, reverse sampling.

Everything here is a pure function of numpy arrays plus an explicit random
source. No networks, no files. The denoising network enters only as an opaque
``denoise_fn(x_t, t) -> prediction`` callable.

Conventions:
- pixel data lives in [-1, 1]
- timesteps t are 1-based, t in [1, T]; alpha_bars[t-1] is the cumulative
  product of (1 - beta) up to and including step t
- the reverse step uses the standard DDPM posterior
      mu(x_t, x0) = sqrt(abar_{t-1}) * beta_t / (1 - abar_t) * x0
                  + sqrt(1 - beta_t) * (1 - abar_{t-1}) / (1 - abar_t) * x_t
  with abar_0 := 1, so sigma_1 = 0 and the final step is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

PredictionTarget = Literal["epsilon", "x0"]

VarianceKind = Literal["posterior", "beta"]

#: small offset used by the cosine alpha-bar construction
COSINE_S = 0.008
#: betas from the cosine construction are clipped below this value
COSINE_BETA_MAX = 0.999


class ParameterError(ValueError):
    """Invalid argument to a diffusion operation."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule: per-step betas and cumulative alpha-bar products.

    ``alpha_bars[i] == prod_{s<=i} (1 - betas[s])`` exactly (computed by
    cumulative product), so ``alpha_bars[0] == 1 - betas[0]``.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    kind: str

    def validate(self) -> None:
        if self.T < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if len(self.betas) != self.T or len(self.alpha_bars) != self.T:
            raise ParameterError("betas/alpha_bars length must equal T")
        if not np.all((self.betas > 0.0) & (self.betas < 1.0)):
            raise ParameterError("every beta must lie in (0, 1)")
        if not np.all(np.diff(self.alpha_bars) < 0.0):
            raise ParameterError("alpha_bars must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha-bar at 1-based step t; abar(0) == 1 by convention."""
        if t == 0:
            return 1.0
        _check_t(t, self.T)
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        _check_t(t, self.T)
        return float(self.betas[t - 1])


@dataclass(frozen=True)
class NoisySample:
    """A forward-diffused sample together with the noise that produced it."""

    x_t: np.ndarray
    t: int
    eps: np.ndarray


def _check_t(t: int, T: int) -> None:
    if not 1 <= t <= T:
        raise ParameterError(f"t={t} outside [1, {T}]")


def _check_mode(mode: str) -> None:
    if mode not in ("epsilon", "x0"):
        raise ParameterError(f"unknown prediction mode {mode!r}")


def build_schedule(
    kind: Literal["linear", "cosine"],
    T: int,
    beta_start: float = 2e-3,
    beta_end: float = 0.4,
) -> DiffusionSchedule:
    """Build a noise schedule.

    linear: betas evenly spaced from beta_start to beta_end inclusive.
    cosine: the improved-DDPM construction with offset s=0.008; the beta
    endpoints are ignored and betas are clipped below 0.999. alpha_bars are
    recomputed from the clipped betas so the cumulative-product invariant
    holds exactly.
    """
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ParameterError(
                f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + COSINE_S) / (1.0 + COSINE_S) * math.pi / 2.0) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, COSINE_BETA_MAX)
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}")
    alpha_bars = np.cumprod(1.0 - betas)
    sched = DiffusionSchedule(T=T, betas=betas, alpha_bars=alpha_bars, kind=kind)
    sched.validate()
    return sched


def forward_diffuse(
    x0: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule
) -> NoisySample:
    """Closed-form forward process: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if x0.shape != eps.shape:
        raise ParameterError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    abar = sched.alpha_bar(t)
    x_t = math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps
    return NoisySample(x_t=x_t, t=t, eps=eps)


def invert_forward(
    x_t: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule
) -> np.ndarray:
    """Recover x0 from a noised sample and the (predicted) noise."""
    abar = sched.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)


def loss_epsilon(eps_true: np.ndarray, eps_pred: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    if eps_true.shape != eps_pred.shape:
        raise ParameterError(
            f"shape mismatch: {eps_true.shape} vs {eps_pred.shape}"
        )
    return float(np.mean((eps_true - eps_pred) ** 2))


def loss_x0(x0_true: np.ndarray, x0_pred: np.ndarray) -> float:
    """Mean squared error between true and predicted clean image."""
    if x0_true.shape != x0_pred.shape:
        raise ParameterError(f"shape mismatch: {x0_true.shape} vs {x0_pred.shape}")
    return float(np.mean((x0_true - x0_pred) ** 2))


def posterior_coefficients(
    t: int, sched: DiffusionSchedule, variance: VarianceKind = "posterior"
) -> tuple[float, float, float]:
    """(coef_x0, coef_xt, sigma) of the reverse-step posterior at step t.

    sigma is forced to 0 at t=1 regardless of the variance kind.
    """
    _check_t(t, sched.T)
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t - 1)
    beta_t = sched.beta(t)
    coef_x0 = math.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    coef_xt = math.sqrt(1.0 - beta_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    if t == 1:
        sigma = 0.0
    elif variance == "posterior":
        sigma = math.sqrt((1.0 - abar_prev) / (1.0 - abar_t) * beta_t)
    elif variance == "beta":
        sigma = math.sqrt(beta_t)
    else:
        raise ParameterError(f"unknown variance kind {variance!r}")
    return coef_x0, coef_xt, sigma


def reverse_step(
    x_t: np.ndarray,
    t: int,
    prediction: np.ndarray,
    mode: PredictionTarget,
    sched: DiffusionSchedule,
    noise: np.ndarray | None,
    clamp_x0: bool = True,
    variance: VarianceKind = "posterior",
) -> np.ndarray:
    """One reverse diffusion step x_t -> x_{t-1}.

    ``prediction`` is the network output: predicted noise in epsilon mode, or
    the predicted clean image in x0 mode. The effective x0 estimate is clamped
    to [-1, 1] by default (togglable for ablation). ``noise`` is ignored at
    t=1 where sigma is 0.
    """
    _check_mode(mode)
    _check_t(t, sched.T)
    if mode == "epsilon":
        x0_hat = invert_forward(x_t, t, prediction, sched)
    else:
        x0_hat = prediction
    if clamp_x0:
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
    coef_x0, coef_xt, sigma = posterior_coefficients(t, sched, variance)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if sigma == 0.0 or noise is None:
        return mean
    if noise.shape != x_t.shape:
        raise ParameterError(f"noise shape {noise.shape} != x_t shape {x_t.shape}")
    return mean + sigma * noise


DenoiseFn = Callable[[np.ndarray, int], np.ndarray]


def sample_loop(
    denoise_fn: DenoiseFn,
    shape: Sequence[int],
    mode: PredictionTarget,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    clamp_x0: bool = True,
    variance: VarianceKind = "posterior",
) -> np.ndarray:
    """Draw x_T ~ N(0, I) and run the full reverse chain down to x_0."""
    _check_mode(mode)
    x = rng.standard_normal(tuple(shape)).astype(np.float32)
    for t in range(sched.T, 0, -1):
        pred = denoise_fn(x, t)
        noise = (
            rng.standard_normal(tuple(shape)).astype(np.float32) if t > 1 else None
        )
        x = reverse_step(x, t, pred, mode, sched, noise, clamp_x0, variance)
    return x


def truncated_project(
    x: np.ndarray,
    t_corr: int,
    denoise_fn: DenoiseFn,
    mode: PredictionTarget,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    clamp_x0: bool = True,
    variance: VarianceKind = "posterior",
) -> np.ndarray:
    """Noise x up to step t_corr, then denoise back down.

    A shallow t_corr pulls the patches of x toward the learned distribution
    while preserving its global content; t_corr == T is a full resample
    started from forward_diffuse(x, T).
    """
    _check_mode(mode)
    _check_t(t_corr, sched.T)
    eps = rng.standard_normal(x.shape).astype(np.float32)
    cur = forward_diffuse(x, t_corr, eps, sched).x_t
    for t in range(t_corr, 0, -1):
        pred = denoise_fn(cur, t)
        noise = rng.standard_normal(x.shape).astype(np.float32) if t > 1 else None
        cur = reverse_step(cur, t, pred, mode, sched, noise, clamp_x0, variance)
    return cur
