"""Training and diagnostic losses.

Denoising score matching for the teacher and fake-score networks, the
approximated score difference, the naive and projected single-sample
generator losses, and their alpha-weighted fusion with the stop-gradient
L1 weighting. The arithmetic from network outputs to the scalar loss lives
in one shared graph tail, so the MLP training path and the closed-form toy
wrappers exercise the same estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComputeGraph
from .diffusion import NoiseSchedule, sample_psi_sigma, sample_theta_times
from .networks import (
    NetworkParams,
    build_denoiser,
    denoise,
    flat_gradient,
    param_nodes,
)
from .oracle import MCEstimate, ToyState, mc_estimate

WEIGHT_FLOOR = 1e-8  # per-row floor for the stop-gradient L1 denominator


@dataclass
class LossReport:
    value: float
    per_term: dict[str, float] = field(default_factory=dict)
    sigma: float = 0.0
    batch_size: int = 0


def edm_gamma(sigma, sigma_data: float):
    """EDM score-matching weight (sigma^2 + sd^2) / (sigma * sd)^2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma ** 2 + sigma_data ** 2) / (sigma * sigma_data) ** 2


def _denoise_any(net, x_t, sigma):
    if isinstance(net, NetworkParams):
        return denoise(net, x_t, sigma)
    return net(x_t, sigma)


def delta_hat(phi, psi, x_t, sigma) -> np.ndarray:
    """Approximated score difference (f_phi - f_psi) / sigma^2.

    phi and psi are NetworkParams or denoiser callables f(x_t, sigma).
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    sig = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    return (_denoise_any(phi, x_t, sigma) - _denoise_any(psi, x_t, sigma)) / sig ** 2


def dsm_loss_value(denoiser_fn, x_clean, rng=None, p_mean: float = -1.2,
                   p_std: float = 1.2, sigma_data: float = 0.5,
                   weighting=None, sigma=None, eps=None) -> LossReport:
    """Value of the score-matching loss for an arbitrary denoiser callable.

    Lets closed-form oracles (analytic posterior means, cheating nets) be
    scored by the same loss definition the trainable path uses; sigma and
    eps may be pinned for exact-replay checks.
    """
    x_clean = np.atleast_2d(np.asarray(x_clean, dtype=np.float64))
    n, d = x_clean.shape
    if sigma is None:
        sigma = sample_psi_sigma(rng, p_mean, p_std, n)
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64).reshape(-1),
                                (n,)) if np.size(sigma) == 1 else \
            np.asarray(sigma, dtype=np.float64).reshape(-1)
    if eps is None:
        eps = rng.standard_normal((n, d))
    x_t = x_clean + sigma.reshape(-1, 1) * eps
    gamma = weighting(sigma) if weighting is not None else edm_gamma(sigma, sigma_data)
    sq = np.sum((_denoise_any(denoiser_fn, x_t, sigma) - x_clean) ** 2, axis=1)
    value = float(np.mean(gamma * sq))
    return LossReport(value=value, per_term={"weighted_mse": value},
                      sigma=float(sigma.mean()), batch_size=n)


def dsm_loss(params: NetworkParams, x_clean, rng: np.random.Generator,
             p_mean: float = -1.2, p_std: float = 1.2, weighting=None):
    """Denoising score-matching loss and parameter gradient.

    Noise levels follow the lognormal sample_psi_sigma distribution; the
    default weighting is the EDM gamma. Returns (LossReport, flat gradient).
    """
    x_clean = np.atleast_2d(np.asarray(x_clean, dtype=np.float64))
    n, d = x_clean.shape
    if n == 0:
        raise ValueError("batch must be non-empty")
    sigma = sample_psi_sigma(rng, p_mean, p_std, n)
    eps = rng.standard_normal((n, d))
    x_t = x_clean + sigma.reshape(-1, 1) * eps
    gamma = (weighting(sigma) if weighting is not None
             else edm_gamma(sigma, params.config.sigma_data))
    g = ComputeGraph()
    nodes, bindings = param_nodes(g, params, "net", mode="train")
    f = build_denoiser(g, params.config, nodes, g.constant(x_t), sigma)
    rows = g.mul(g.constant(gamma.reshape(-1, 1)),
                 g.sq_norm(g.sub(f, g.constant(x_clean)), axis=1))
    root = g.mean(rows)
    value = g.evaluate(root, bindings).item()
    grad = flat_gradient(g.backward(root), params, "net")
    report = LossReport(value=value, per_term={"weighted_mse": value},
                        sigma=float(sigma.mean()), batch_size=n)
    return report, grad


def _generator_loss_tail(g: ComputeGraph, x_g, f_phi, f_psi, sigma: np.ndarray,
                         kind: str, alpha: float, data_dim: int):
    """Shared arithmetic from network outputs to the scalar generator loss.

    kind "l1":    mean ||delta||^2                  = sigma^-4 ||f_phi - f_psi||^2
    kind "l2":    mean sigma^-2 delta^T(f_phi - x_g)
    kind "fused": mean w [(1-alpha)||f_phi-f_psi||^2 + (f_phi-f_psi)^T(f_psi-x_g)]
                  with w = C / max(||x_g - f_phi||_1 under stop-gradient, floor);
                  the sigma^4 of the paper weighting cancels against the
                  sigma^-4 of the loss, leaving w independent of sigma.
    """
    inv_sig4 = g.constant(1.0 / sigma.reshape(-1, 1) ** 4)
    diff = g.sub(f_phi, f_psi)
    if kind == "l1":
        root = g.mean(g.mul(inv_sig4, g.sq_norm(diff, axis=1)))
        return root, {}
    if kind == "l2":
        root = g.mean(g.mul(inv_sig4, g.dot(diff, g.sub(f_phi, x_g), axis=1)))
        return root, {}
    if kind == "fused":
        l1_rows = g.l1_norm(g.sub(x_g, f_phi), axis=1)
        w = g.scale(g.reciprocal(g.maximum(g.stop_gradient(l1_rows),
                                           WEIGHT_FLOOR)), float(data_dim))
        t1 = g.scale(g.mul(w, g.sq_norm(diff, axis=1)), 1.0 - alpha)
        t2 = g.mul(w, g.dot(diff, g.sub(f_psi, x_g), axis=1))
        root = g.mean(g.add(t1, t2))
        return root, {"l1_term": g.mean(t1), "delta_term": g.mean(t2),
                      "weight_mean": g.mean(w)}
    raise ValueError(f"unknown generator loss kind {kind!r}")


def generator_loss(phi: NetworkParams, psi: NetworkParams, theta: NetworkParams,
                   z, rng: np.random.Generator, schedule: NoiseSchedule,
                   kind: str = "fused", alpha: float = 1.2,
                   sigma_init: float = 2.5, disable_pullbacks: bool = False):
    """One generator update loss over a latent batch z.

    Builds the full graph x_g = G(sigma_init z), x_t = x_g + sigma eps, both
    frozen-network forwards, and the selected loss tail; the returned flat
    gradient is with respect to theta and flows through the network-input
    pullbacks unless disable_pullbacks stops them (leaving only the direct
    x_g path, for the ablation).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    if n == 0:
        raise ValueError("batch must be non-empty")
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    _, sigma = sample_theta_times(schedule, rng, n)
    eps = rng.standard_normal((n, d))
    g = ComputeGraph()
    th_nodes, bindings = param_nodes(g, theta, "theta", mode="train")
    ph_nodes, b = param_nodes(g, phi, "phi", mode="frozen")
    bindings.update(b)
    ps_nodes, b = param_nodes(g, psi, "psi", mode="frozen")
    bindings.update(b)
    x_g = build_denoiser(g, theta.config, th_nodes,
                         g.constant(sigma_init * z), sigma_init)
    x_t = g.add(x_g, g.constant(sigma.reshape(-1, 1) * eps))
    net_in = g.stop_gradient(x_t) if disable_pullbacks else x_t
    f_phi = build_denoiser(g, phi.config, ph_nodes, net_in, sigma)
    f_psi = build_denoiser(g, psi.config, ps_nodes, net_in, sigma)
    root, term_nodes = _generator_loss_tail(g, x_g, f_phi, f_psi, sigma,
                                            kind, alpha, d)
    value = g.evaluate(root, bindings).item()
    grad = flat_gradient(g.backward(root), theta, "theta")
    per_term = {name: g.value_of(node).item()
                for name, node in term_nodes.items()}
    report = LossReport(value=value, per_term=per_term,
                        sigma=float(sigma.mean()), batch_size=n)
    return report, grad


def l1_hat_loss(phi, psi, theta, z, rng, schedule, sigma_init: float = 2.5):
    """Naive squared-score-difference generator loss (the failure case)."""
    return generator_loss(phi, psi, theta, z, rng, schedule, kind="l1",
                          sigma_init=sigma_init)


def l2_hat_loss(phi, psi, theta, z, rng, schedule, sigma_init: float = 2.5):
    """Projected score-matching generator loss."""
    return generator_loss(phi, psi, theta, z, rng, schedule, kind="l2",
                          sigma_init=sigma_init)


def sid_fused_loss(phi, psi, theta, z, rng, schedule, alpha: float,
                   sigma_init: float = 2.5, disable_pullbacks: bool = False):
    """Alpha-weighted fusion with the stop-gradient L1 weighting."""
    return generator_loss(phi, psi, theta, z, rng, schedule, kind="fused",
                          alpha=alpha, sigma_init=sigma_init,
                          disable_pullbacks=disable_pullbacks)


def toy_generator_loss(state: ToyState, z, eps, kind: str,
                       alpha: float = 1.0):
    """Generator loss on the closed-form toy world, via the real estimator.

    Runs the exact loss tail used for training, with the toy teacher a x_t,
    fake score a x_t + c, and generator theta + z (z is the unit-sensitivity
    latent, so dG/dtheta = 1). z and eps may be scalars or equal-length
    vectors; the value is the mean over samples. Returns (value, dvalue/dtheta).
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    if z.shape != eps.shape:
        raise ValueError("z and eps must have matching lengths")
    s2 = state.sigma ** 2
    a = 1.0 / (1.0 + s2)
    c = state.psi * s2 / (1.0 + s2)
    g = ComputeGraph()
    th = g.leaf("theta", (1, 1), param=True)
    x_g = g.add(th, g.constant(z))
    x_t = g.add(x_g, g.constant(state.sigma * eps))
    f_phi = g.scale(x_t, a)
    f_psi = g.add(g.scale(x_t, a), g.constant([[c]]))
    root, _ = _generator_loss_tail(g, x_g, f_phi, f_psi,
                                   np.full(z.shape[0], state.sigma), kind, alpha, 1)
    value = g.evaluate(root, {"theta": [[state.theta]]}).item()
    grad = g.backward(root)["theta"].item()
    return value, grad


def mesm_projected_estimate(delta_fn, phi, xg_sampler, sigma: float, n: int,
                            rng: np.random.Generator,
                            chunk: int = 65536) -> MCEstimate:
    """Monte Carlo estimate of the projected form of the score-matching loss.

    delta_fn(x_t) supplies the exact score difference (available in the
    Gaussian world through the optimal fake score); phi is the data
    denoiser (params or callable). This is a diagnostic, not a training
    loss: outside the oracle world the exact difference is unavailable.
    """
    inv_s2 = 1.0 / (sigma * sigma)

    def sampler(r, m):
        x_g = xg_sampler(r, m)
        eps = r.standard_normal(x_g.shape)
        return np.concatenate([x_g, x_g + sigma * eps], axis=1)

    def integrand(pair):
        d = pair.shape[1] // 2
        x_g, x_t = pair[:, :d], pair[:, d:]
        proj = _denoise_any(phi, x_t, sigma) - x_g
        return inv_s2 * np.sum(delta_fn(x_t) * proj, axis=1)

    return mc_estimate(sampler, integrand, n, rng, chunk=chunk)
