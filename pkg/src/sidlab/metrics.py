"""Identity verification harnesses, distance metrics, and trajectory analysis.

The Tweedie and projection checks compare a Monte Carlo left side against
an independent right side at the 3-standard-error level; the theorem check
adds the closed-form reference. The distance metrics are the desk-scale
stand-ins for image-space evaluation: a Frechet distance between
moment-fitted Gaussians and the exact 1-D Wasserstein distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .losses import mesm_projected_estimate
from .oracle import (
    GaussianWorld,
    MCEstimate,
    analytic_denoiser,
    fisher_divergence_analytic,
    mc_estimate,
)


@dataclass
class IdentityReport:
    name: str
    lhs: MCEstimate
    rhs: MCEstimate
    z_score: float
    passed: bool
    reference: float | None = None
    ess: float | None = None
    low_ess: bool = False

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f" ess={self.ess:.0f}" if self.ess is not None else ""
        return f"{self.name}: {status} (max |z| = {self.z_score:.2f}{extra})"


def _max_z(lhs: MCEstimate, rhs: MCEstimate, exact_tol: float = 1e-9) -> float:
    diff = np.abs(np.atleast_1d(lhs.mean) - np.atleast_1d(rhs.mean))
    se = np.sqrt(np.atleast_1d(lhs.stderr) ** 2 + np.atleast_1d(rhs.stderr) ** 2)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                 np.where(diff <= exact_tol, 0.0, np.inf))
    return float(z.max())


def check_tweedie(x0_sampler, score_fn, sigma: float, n: int,
                  rng: np.random.Generator, n_probes: int = 16,
                  name: str = "tweedie") -> IdentityReport:
    """Posterior mean by self-normalized importance sampling vs x_t + s^2 score.

    Probe points are drawn from the diffused distribution itself. The LHS
    weights each clean draw by the forward conditional likelihood; its
    standard error uses the standard ratio-estimator form, and the effective
    sample size is reported (flagged when any probe drops below 10).
    """
    if n < 1000:
        raise ValueError("need n >= 1000 draws")
    probes_x0 = x0_sampler(rng, n_probes)
    d = probes_x0.shape[1]
    x_t = probes_x0 + sigma * rng.standard_normal((n_probes, d))
    draws = x0_sampler(rng, n)
    lhs_mean = np.empty((n_probes, d))
    lhs_se = np.empty((n_probes, d))
    ess = np.empty(n_probes)
    inv_two_var = 1.0 / (2.0 * sigma * sigma)
    for i in range(n_probes):
        logw = -np.sum((x_t[i] - draws) ** 2, axis=1) * inv_two_var
        w = np.exp(logw - logw.max())
        total = w.sum()
        mu = (w[:, None] * draws).sum(axis=0) / total
        lhs_mean[i] = mu
        lhs_se[i] = np.sqrt((w[:, None] ** 2 * (draws - mu) ** 2).sum(axis=0)) / total
        ess[i] = total * total / (w * w).sum()
    rhs_mean = x_t + sigma * sigma * score_fn(x_t)
    lhs = MCEstimate(mean=lhs_mean.ravel(), stderr=lhs_se.ravel(), n=n)
    rhs = MCEstimate(mean=rhs_mean.ravel(),
                     stderr=np.zeros(n_probes * d), n=n_probes)
    z = _max_z(lhs, rhs)
    return IdentityReport(name=name, lhs=lhs, rhs=rhs, z_score=z,
                          passed=z <= 3.0, ess=float(ess.min()),
                          low_ess=bool(np.any(ess < 10)))


def check_projection_identity(xg_sampler, u_fn, score_fn, sigma: float, n: int,
                              rng: np.random.Generator,
                              name: str = "projection") -> IdentityReport:
    """E[u(x_t)^T score(x_t)] vs E[u(x_t)^T grad ln q(x_t | x_g)], independent draws."""

    def lhs_sampler(r, m):
        x_g = xg_sampler(r, m)
        return x_g + sigma * r.standard_normal(x_g.shape)

    def lhs_integrand(x_t):
        return np.sum(u_fn(x_t) * score_fn(x_t), axis=1)

    def rhs_sampler(r, m):
        x_g = xg_sampler(r, m)
        eps = r.standard_normal(x_g.shape)
        return np.concatenate([x_g + sigma * eps, eps], axis=1)

    def rhs_integrand(pair):
        d = pair.shape[1] // 2
        x_t, eps = pair[:, :d], pair[:, d:]
        return np.sum(u_fn(x_t) * (-eps / sigma), axis=1)

    lhs = mc_estimate(lhs_sampler, lhs_integrand, n, rng)
    rhs = mc_estimate(rhs_sampler, rhs_integrand, n, rng)
    z = _max_z(lhs, rhs)
    return IdentityReport(name=name, lhs=lhs, rhs=rhs, z_score=z,
                          passed=z <= 3.0)


def check_theorem1(theta_vec, sigma: float, n: int, rng: np.random.Generator,
                   name: str = "theorem1") -> IdentityReport:
    """Squared exact score difference vs its projected estimator vs closed form.

    Runs in the Gaussian world where the optimal fake score is available,
    so the exact difference is the constant -theta/(1+sigma^2).
    """
    theta_vec = np.asarray(theta_vec, dtype=np.float64).reshape(-1)
    dim = theta_vec.size
    data_world = GaussianWorld(dim=dim, mean=np.zeros(dim))
    gen_world = GaussianWorld(dim=dim, mean=theta_vec)
    delta_const = -theta_vec / (1.0 + sigma * sigma)

    def xt_sampler(r, m):
        x_g = gen_world.sample(r, m)
        return x_g + sigma * r.standard_normal(x_g.shape)

    lhs = mc_estimate(xt_sampler,
                      lambda x_t: np.full(x_t.shape[0], delta_const @ delta_const),
                      n, rng)
    rhs = mesm_projected_estimate(
        lambda x_t: np.broadcast_to(delta_const, x_t.shape),
        lambda x_t, s: analytic_denoiser(data_world, x_t, s),
        lambda r, m: gen_world.sample(r, m), sigma, n, rng)
    reference = fisher_divergence_analytic(theta_vec, sigma)
    z = _max_z(lhs, rhs)
    ref_ok = (abs(lhs.mean - reference) <= max(3 * lhs.stderr, 1e-9)
              and abs(rhs.mean - reference) <= 3 * max(rhs.stderr, 1e-12))
    return IdentityReport(name=name, lhs=lhs, rhs=rhs, z_score=z,
                          passed=bool(z <= 3.0 and ref_ok), reference=reference)


# ---------------------------------------------------------------------------
# distribution distances

def _fit_moments(samples: np.ndarray):
    mu = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance not finite")
    return mu, cov


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_frechet(samples_a, samples_b) -> float:
    """Frechet distance between Gaussians moment-fitted to each sample set."""
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets have different dimensions")
    d = a.shape[1]
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} samples per set")
    mu_a, cov_a = _fit_moments(a)
    mu_b, cov_b = _fit_moments(b)
    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    cross = np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0),
                            0.0, None)).sum()
    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


def wasserstein_1d(samples_a, samples_b) -> float:
    """Exact order-statistics W1 distance between equal-size 1-D samples."""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError("sample counts must match")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


# ---------------------------------------------------------------------------
# trajectory analysis

@dataclass
class TrajectoryFit:
    slope: float
    r_squared: float
    n_points: int


def trajectory_summary(images, metric, window: int | None = None) -> TrajectoryFit:
    """Least-squares slope of log(metric) vs log(images) over an early window.

    Rows with zero images are dropped (their log is undefined); non-positive
    metric values are an error. ``window`` limits the fit to the first k
    usable rows.
    """
    images = np.asarray(images, dtype=np.float64).ravel()
    metric = np.asarray(metric, dtype=np.float64).ravel()
    keep = images > 0
    images, metric = images[keep], metric[keep]
    if window is not None:
        images, metric = images[:window], metric[:window]
    if images.size < 4:
        raise ValueError("need at least 4 usable log rows")
    if np.any(metric <= 0) or not np.all(np.isfinite(metric)):
        raise ValueError("metric values must be positive and finite")
    x = np.log(images)
    y = np.log(metric)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res < 1e-18 else \
        (1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0)
    return TrajectoryFit(slope=float(slope), r_squared=r2, n_points=images.size)


# ---------------------------------------------------------------------------
# metrics log I/O

METRICS_FIELDS = ("images_seen", "step", "loss_psi", "loss_theta", "metric",
                  "alpha", "sigma_mean")


def write_metrics_csv(path: str, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_FIELDS})


def read_metrics_csv(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                tuple(reader.fieldnames) != METRICS_FIELDS:
            raise ValueError(f"{path}: malformed metrics log header")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty metrics log")
    out = {}
    for key in METRICS_FIELDS:
        out[key] = np.array([float(r[key]) for r in rows])
    return out
