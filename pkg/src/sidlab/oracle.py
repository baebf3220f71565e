"""Closed-form Gaussian world and Monte Carlo expectation utilities.

Everything here has an exact answer: Tweedie posterior means and scores for
isotropic Gaussian data, the scalar toy model with its score difference and
loss values, and the analytic value of the model-based score-matching loss.
These are the oracles the estimators are verified against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianWorld:
    """Data distribution N(mean, I) in `dim` dimensions."""

    dim: int
    mean: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if mean.size != self.dim:
            raise ValueError(f"mean length {mean.size} != dim {self.dim}")
        object.__setattr__(self, "mean", mean)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class ToyState:
    """Scalar toy world: data N(0,1), generator N(theta,1), fake-score knob psi."""

    theta: float
    psi: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class MCEstimate:
    mean: float | np.ndarray
    stderr: float | np.ndarray
    n: int


def analytic_denoiser(world: GaussianWorld, x_t, sigma: float) -> np.ndarray:
    """Exact posterior mean E[x0 | x_t] = mu + (x_t - mu) / (1 + sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x_t = np.asarray(x_t, dtype=np.float64)
    return world.mean + (x_t - world.mean) / (1.0 + sigma * sigma)


def analytic_score(world: GaussianWorld, x_t, sigma: float) -> np.ndarray:
    """Exact diffused-marginal score -(x_t - mu) / (1 + sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x_t = np.asarray(x_t, dtype=np.float64)
    return -(x_t - world.mean) / (1.0 + sigma * sigma)


# ---------------------------------------------------------------------------
# scalar toy model

def toy_denoiser_data(x_t, sigma: float) -> np.ndarray:
    """Toy teacher: exact posterior mean x_t / (1 + sigma^2) for N(0,1) data."""
    return np.asarray(x_t, dtype=np.float64) / (1.0 + sigma * sigma)


def toy_denoiser_fake(state: ToyState):
    """Toy fake-score net x_t/(1+s^2) + psi s^2/(1+s^2), as a denoiser callable."""
    def fn(x_t, sigma):
        s2 = sigma * sigma
        return (np.asarray(x_t, dtype=np.float64) + state.psi * s2) / (1.0 + s2)
    return fn


def toy_delta(state: ToyState) -> float:
    """Approximated score difference on the toy model: -psi / (1 + sigma^2)."""
    return -state.psi / (1.0 + state.sigma ** 2)


def toy_delta_star(state: ToyState) -> float:
    """Exact score difference with the optimal fake score: -theta / (1 + sigma^2)."""
    return -state.theta / (1.0 + state.sigma ** 2)


def toy_losses(state: ToyState) -> tuple[float, float]:
    """Closed-form (true MESM loss, naive approximation) on the toy model.

    The second value depends only on psi, which is why the naive loss gives
    no gradient toward the optimal generator.
    """
    denom = (1.0 + state.sigma ** 2) ** 2
    return state.theta ** 2 / denom, state.psi ** 2 / denom


def toy_l2_gradient(state: ToyState, z: float = 0.0,
                    sigma_init: float = 2.5) -> float:
    """Closed-form generator gradient of the projected single-sample loss.

    Equal to -(1+sigma^2)^{-1} * delta * dG/dtheta with dG/dtheta = 1 for the
    toy generator theta + (unit-sensitivity latent); the same value falls out
    of differentiating the estimator form psi/(1+sigma^2)^2 [x_g - eps/sigma],
    so it does not depend on z or the noise draw.
    """
    return -toy_delta(state) / (1.0 + state.sigma ** 2)


def toy_l2_estimator_value(state: ToyState, z: float, eps: float) -> float:
    """Closed-form value of the single-sample projected loss on the toy model."""
    x_g = state.theta + z
    return state.psi / (1.0 + state.sigma ** 2) ** 2 * (x_g - eps / state.sigma)


def fisher_divergence_analytic(theta_vec, sigma: float) -> float:
    """Exact MESM value for data N(0,I) and generator N(theta,I): |theta|^2/(1+s^2)^2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    theta_vec = np.asarray(theta_vec, dtype=np.float64).reshape(-1)
    return float(theta_vec @ theta_vec) / (1.0 + sigma * sigma) ** 2


# ---------------------------------------------------------------------------
# Monte Carlo utilities

def mc_estimate(sampler, integrand, n: int, rng: np.random.Generator,
                chunk: int = 65536) -> MCEstimate:
    """Streaming mean and standard error of integrand over sampler draws.

    ``sampler(rng, m)`` yields m draws; ``integrand(draws)`` maps them to
    (m,) or (m, k) values. Accumulation is chunked Welford (Chan's parallel
    merge), so memory stays bounded and the reduction order is fixed.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    count = 0
    mean = None
    m2 = None
    scalar = True
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        vals = np.asarray(integrand(sampler(rng, m)), dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        else:
            scalar = False
        cm = vals.mean(axis=0)
        cm2 = ((vals - cm) ** 2).sum(axis=0)
        if mean is None:
            mean, m2, count = cm, cm2, m
        else:
            delta = cm - mean
            total = count + m
            mean = mean + delta * (m / total)
            m2 = m2 + cm2 + delta * delta * (count * m / total)
            count = total
        remaining -= m
    stderr = np.sqrt(m2 / (count - 1) / count)
    if scalar and mean.size == 1:
        return MCEstimate(mean=float(mean[0]), stderr=float(stderr[0]), n=count)
    return MCEstimate(mean=mean, stderr=stderr, n=count)
