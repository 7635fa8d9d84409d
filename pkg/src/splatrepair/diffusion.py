"""Diffusion math core: schedules, noising, DDPM/DDIM steps, partial edits.

Conventions: timestep t runs 1..T with the t=0 convention alpha_bar[0] = 1
(clean data). "Latents" here are plain image-space arrays of any shape.
A denoiser is any callable (z_t, t, context=None) -> eps_hat with the same
shape as z_t; context is opaque conditioning that simple denoisers ignore.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import DomainError

Denoiser = Callable[..., np.ndarray]


class DenoiserProtocol(Protocol):
    def __call__(self, z_t: np.ndarray, t: int, context=None) -> np.ndarray: ...


@dataclass(frozen=True)
class Schedule:
    """Noise schedule: beta/alpha/alpha_bar indexed 0..T, index 0 = clean."""

    T: int
    beta: np.ndarray        # (T+1,), beta[0] = 0 by convention
    alpha: np.ndarray       # 1 - beta
    alpha_bar: np.ndarray   # cumulative product of alpha

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.T + 1,):
                raise DomainError(f"{name} must have shape ({self.T + 1},)")
            object.__setattr__(self, name, arr)

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "betas": self.beta[1:].tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        d = json.loads(text)
        betas = np.asarray(d["betas"], dtype=np.float64)
        return _schedule_from_betas(int(d["T"]), betas)


def _schedule_from_betas(T: int, betas: np.ndarray) -> Schedule:
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return Schedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def make_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.05, kind: str = "linear"
) -> Schedule:
    """A linear beta schedule; alpha_bar is strictly decreasing by construction."""
    if kind != "linear":
        raise DomainError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise DomainError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, T)
    return _schedule_from_betas(T, betas)


def _check_t(t: int, schedule: Schedule, lo: int = 1):
    if not lo <= t <= schedule.T:
        raise DomainError(f"t={t} outside [{lo}, {schedule.T}]")


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, schedule: Schedule) -> np.ndarray:
    """Forward-noise clean data to step t: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    if t == 0:
        return z0.copy()
    _check_t(t, schedule)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise DomainError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddpm_step(
    z_t: np.ndarray,
    t: int,
    denoiser: Denoiser,
    schedule: Schedule,
    noise: np.ndarray | None = None,
    context=None,
) -> np.ndarray:
    """One ancestral step with fixed variance beta_t; no noise is added at t=1."""
    _check_t(t, schedule)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(denoiser(z_t, t, context=context), dtype=np.float64)
    if eps_hat.shape != z_t.shape:
        raise DomainError("denoiser changed the latent shape")
    beta = schedule.beta[t]
    ab = schedule.alpha_bar[t]
    mu = (z_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha[t])
    if t == 1 or noise is None:
        return mu
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != z_t.shape:
        raise DomainError(f"noise shape {noise.shape} != latent shape {z_t.shape}")
    return mu + np.sqrt(beta) * noise


def ddim_step(
    z_t: np.ndarray,
    t: int,
    t_prev: int,
    denoiser: Denoiser,
    schedule: Schedule,
    context=None,
) -> np.ndarray:
    """Deterministic step: reconstruct z0_hat, then renoise to t_prev.

    Uses cumulative alpha_bar in both terms (the standard DDIM convention).
    """
    _check_t(t, schedule)
    if not 0 <= t_prev < t:
        raise DomainError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(denoiser(z_t, t, context=context), dtype=np.float64)
    if eps_hat.shape != z_t.shape:
        raise DomainError("denoiser changed the latent shape")
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t_prev]
    z0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_p) * z0_hat + np.sqrt(1.0 - ab_p) * eps_hat


def noise_for(shape, seed: int) -> np.ndarray:
    """The seeded standard normal used by partial_denoise (documented so tests
    and echo denoisers can reproduce the exact injected noise)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(shape)


def partial_denoise(
    x: np.ndarray,
    fraction: float,
    denoiser: Denoiser,
    schedule: Schedule,
    seed: int = 0,
    step_hook: Callable[[int, np.ndarray], None] | None = None,
    context=None,
) -> np.ndarray:
    """Noise x to t* = round(fraction * T), then DDIM back to 0.

    fraction 0 is the bit-exact identity. step_hook(t, z) is invoked once per
    executed DDIM step, so callers can count or inspect steps.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"fraction {fraction} outside [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    t_star = int(round(fraction * schedule.T))
    if t_star == 0:
        return x.copy()
    eps = noise_for(x.shape, seed)
    z = q_sample(x, t_star, eps, schedule)
    for t in range(t_star, 0, -1):
        z = ddim_step(z, t, t - 1, denoiser, schedule, context=context)
        if step_hook is not None:
            step_hook(t, z)
    return z


def masked_inpaint_loss(
    eps_hat: np.ndarray, eps: np.ndarray, m_v: np.ndarray
) -> float:
    """Mean squared residual over the valid region; 0 when the mask is empty."""
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    m = np.asarray(m_v)
    if eps_hat.shape != eps.shape:
        raise DomainError(f"shape mismatch {eps_hat.shape} vs {eps.shape}")
    if m.shape != eps.shape[: m.ndim]:
        raise DomainError(f"mask shape {m.shape} incompatible with {eps.shape}")
    sel = m.astype(bool)
    if not sel.any():
        return 0.0
    resid = (eps_hat - eps)[sel]
    return float(np.mean(resid * resid))


def gaussian_oracle_denoiser(mu, sigma: float, schedule: Schedule) -> Denoiser:
    """The Bayes-optimal noise predictor for data ~ N(mu, sigma^2 I).

    eps_hat(z_t, t) = sqrt(1 - ab_t) (z_t - sqrt(ab_t) mu)
                      / (ab_t sigma^2 + 1 - ab_t)
    """
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    mu = np.asarray(mu, dtype=np.float64)

    def denoiser(z_t: np.ndarray, t: int, context=None) -> np.ndarray:
        ab = schedule.alpha_bar[t]
        return np.sqrt(1.0 - ab) * (z_t - np.sqrt(ab) * mu) / (
            ab * sigma**2 + (1.0 - ab)
        )

    return denoiser
