"""Forward diffusion mechanics.

Noise schedule, timestep sampling for the two update phases, Gaussian
perturbation with its analytic conditional score, EDM-style preconditioning
coefficients, and a deterministic Heun probability-flow sampler used as the
multi-step teacher baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise-level parameterization sigma(t) on t in [0, 1].

    t = 0 maps to sigma_min and t = 1 to sigma_max; generator updates draw
    t uniformly on [0, t_max/1000], so t_max < 1000 excludes the largest
    noise levels.
    """

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    t_max: int = 800

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("require 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not (0 <= self.t_max <= 1000):
            raise ValueError("t_max must lie in [0, 1000]")


@dataclass(frozen=True)
class DiffusionSample:
    """One draw of the forward corruption x_t = x_g + sigma * eps."""

    x_g: np.ndarray
    eps: np.ndarray
    sigma: float
    x_t: np.ndarray


def sigma_at(schedule: NoiseSchedule, t) -> np.ndarray | float:
    """Noise level at normalized time t in [0, 1]; vectorized over t."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    inv_rho = 1.0 / schedule.rho
    hi = schedule.sigma_max ** inv_rho
    lo = schedule.sigma_min ** inv_rho
    out = (hi + (1.0 - t_arr) * (lo - hi)) ** schedule.rho
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def sample_theta_time(schedule: NoiseSchedule, rng: np.random.Generator):
    """Draw t ~ Unif[0, t_max/1000] and its sigma for a generator update."""
    t = rng.uniform(0.0, schedule.t_max / 1000.0)
    return t, sigma_at(schedule, t)


def sample_theta_times(schedule: NoiseSchedule, rng: np.random.Generator,
                       n: int):
    """Batched variant of sample_theta_time: one rng call for n draws."""
    t = rng.uniform(0.0, schedule.t_max / 1000.0, size=n)
    return t, sigma_at(schedule, t)


def sample_psi_sigma(rng: np.random.Generator, p_mean: float = -1.2,
                     p_std: float = 1.2, n: int | None = None):
    """Lognormal noise levels for score-network updates: ln sigma ~ N(p_mean, p_std^2)."""
    if p_std < 0:
        raise ValueError("p_std must be non-negative")
    size = None if n is None else n
    draw = rng.standard_normal(size=size)
    sigma = np.exp(draw * p_std + p_mean)
    return float(sigma) if n is None else sigma


def perturb(x_g: np.ndarray, sigma: float, rng: np.random.Generator) -> DiffusionSample:
    """Corrupt x_g with i.i.d. Gaussian noise at level sigma."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x_g = np.asarray(x_g, dtype=np.float64)
    eps = rng.standard_normal(x_g.shape)
    return DiffusionSample(x_g=x_g, eps=eps, sigma=float(sigma),
                           x_t=x_g + sigma * eps)


def conditional_score(x_t: np.ndarray, x_ref: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the Gaussian forward conditional: (x_ref - x_t) / sigma^2."""
    if sigma == 0:
        raise ZeroDivisionError("conditional score is singular at sigma = 0")
    return (np.asarray(x_ref, dtype=np.float64)
            - np.asarray(x_t, dtype=np.float64)) / (sigma * sigma)


def precondition_coeffs(sigma, sigma_data: float):
    """EDM input/output conditioning coefficients (c_skip, c_out, c_in, c_noise)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or sigma_data <= 0:
        raise ValueError("sigma and sigma_data must be positive")
    var = sigma ** 2 + sigma_data ** 2
    c_skip = sigma_data ** 2 / var
    c_out = sigma * sigma_data / np.sqrt(var)
    c_in = 1.0 / np.sqrt(var)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def karras_sigma_grid(schedule: NoiseSchedule, n_steps: int) -> np.ndarray:
    """Descending sigma grid for sampling, with a trailing exact zero."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_steps == 1:
        sigmas = np.array([schedule.sigma_max])
    else:
        inv_rho = 1.0 / schedule.rho
        hi = schedule.sigma_max ** inv_rho
        lo = schedule.sigma_min ** inv_rho
        ramp = np.arange(n_steps) / (n_steps - 1)
        sigmas = (hi + ramp * (lo - hi)) ** schedule.rho
    return np.concatenate([sigmas, [0.0]])


def heun_teacher_sample(denoiser, schedule: NoiseSchedule, n_steps: int,
                        n_samples: int, dim: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Deterministic 2nd-order probability-flow integration from sigma_max to 0.

    ``denoiser(x, sigma)`` maps a (n, dim) batch at scalar sigma to the
    posterior-mean estimate. The final step to sigma = 0 is plain Euler
    (the correction would need the denoiser at zero noise).
    """
    sigmas = karras_sigma_grid(schedule, n_steps)
    x = rng.standard_normal((n_samples, dim)) * sigmas[0]
    for i in range(len(sigmas) - 1):
        s, s_next = sigmas[i], sigmas[i + 1]
        d = (x - denoiser(x, s)) / s
        x_next = x + (s_next - s) * d
        if s_next > 0:
            d_next = (x_next - denoiser(x_next, s_next)) / s_next
            x_next = x + (s_next - s) * 0.5 * (d + d_next)
        x = x_next
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state at sigma step {i}")
    return x
