"""Synthetic low-dimensional datasets, generated in-process.

Gaussian-mixture datasets carry their exact diffused-marginal score, which
the identity checks use as the closed-form reference; moons and
checkerboard are sampling-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DATASET_NAMES = ("gaussian", "ring8", "moons", "checkerboard")


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic mixture: components N(mean_k, std^2 I) with given weights."""

    means: np.ndarray
    std: float
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.size != means.shape[0]:
            raise ValueError("one weight per component required")
        if abs(weights.sum() - 1.0) > 1e-12 or np.any(weights < 0):
            raise ValueError("weights must be a distribution")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.means.shape[0], size=n, p=self.weights)
        return self.means[idx] + self.std * rng.standard_normal((n, self.dim))

    def diffused_score(self, x, sigma: float) -> np.ndarray:
        """Exact score of the mixture corrupted at noise level sigma.

        Diffusing each component inflates its variance to std^2 + sigma^2,
        so the score is the responsibility-weighted component score.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        var = self.std ** 2 + sigma ** 2
        diff = x[:, None, :] - self.means[None, :, :]
        logits = -np.sum(diff ** 2, axis=2) / (2.0 * var) + np.log(self.weights)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        resp /= resp.sum(axis=1, keepdims=True)
        return -np.einsum("nk,nkd->nd", resp, diff) / var


@dataclass(frozen=True)
class Dataset:
    name: str
    dim: int
    sigma_data: float
    mixture: GaussianMixture | None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.mixture is not None:
            return self.mixture.sample(rng, n)
        if self.name == "moons":
            return _sample_moons(rng, n)
        if self.name == "checkerboard":
            return _sample_checkerboard(rng, n)
        raise ValueError(f"no sampler for {self.name!r}")  # pragma: no cover


def _sample_moons(rng: np.random.Generator, n: int) -> np.ndarray:
    # two interleaved half circles of radius 1, Gaussian jitter 0.05
    t = rng.uniform(0.0, np.pi, n)
    lower = rng.integers(0, 2, n).astype(bool)
    x = np.where(lower, 1.0 - np.cos(t), np.cos(t))
    y = np.where(lower, 0.5 - np.sin(t), np.sin(t))
    return np.stack([x, y], axis=1) + 0.05 * rng.standard_normal((n, 2))


def _sample_checkerboard(rng: np.random.Generator, n: int) -> np.ndarray:
    # alternating unit cells tiling [-2, 2] x [-2, 2]
    x1 = rng.uniform(-2.0, 2.0, n)
    x2 = rng.uniform(0.0, 1.0, n) - rng.integers(0, 2, n) * 2.0 + np.floor(x1) % 2
    return np.stack([x1, x2], axis=1)


def _ring8_mixture() -> GaussianMixture:
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture(means=means, std=0.05, weights=np.full(8, 1.0 / 8.0))


def make_dataset(name: str) -> Dataset:
    """Dataset by name; sigma_data is the per-dimension RMS of each construction."""
    if name == "gaussian":
        mix = GaussianMixture(means=np.zeros((1, 1)), std=1.0, weights=[1.0])
        return Dataset(name, dim=1, sigma_data=1.0, mixture=mix)
    if name == "ring8":
        return Dataset(name, dim=2, sigma_data=0.709, mixture=_ring8_mixture())
    if name == "moons":
        return Dataset(name, dim=2, sigma_data=0.707, mixture=None)
    if name == "checkerboard":
        return Dataset(name, dim=2, sigma_data=1.155, mixture=None)
    raise ValueError(f"unknown dataset {name!r}; choose from {DATASET_NAMES}")
