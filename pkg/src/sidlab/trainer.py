"""Distillation training loop.

Teacher pretraining by denoising score matching, generator/fake-score
initialization from the teacher, alternating Adam updates of the two
networks, EMA tracking of the generator, and budget-based stopping with
best-model retention. Every draw goes through the single Generator held in
TrainState, in a fixed order, so (seed, config) determine the trajectory
bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError
from .diffusion import NoiseSchedule
from .losses import dsm_loss, generator_loss
from .networks import NetworkConfig, NetworkParams, generate

GENERATOR_LOSSES = ("fused", "l1", "l2")


class TrainingDivergedError(Exception):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class SiDConfig:
    alpha: float = 1.2
    lr_psi: float = 1e-5
    lr_theta: float = 1e-5
    adam_beta1_psi: float = 0.0
    adam_beta1_theta: float = 0.0
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_scale_psi: float = 1.0
    loss_scale_theta: float = 100.0
    ema_kimg: float = 0.5
    batch_size: int = 256
    sigma_init: float = 2.5
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    budget_images: int = 500_000
    seed: int = 0
    metric_every_images: int = 50_000
    # noise distribution for fake-score updates (ln sigma ~ N(mean, std^2))
    psi_p_mean: float = -1.2
    psi_p_std: float = 1.2
    # ablation switches: train the generator on a different loss, or cut the
    # score-gradient pullbacks through the two frozen networks
    generator_loss: str = "fused"
    disable_score_pullbacks: bool = False

    def __post_init__(self):
        if self.lr_psi <= 0 or self.lr_theta <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.adam_beta1_psi < 1 and 0 <= self.adam_beta1_theta < 1):
            raise ValueError("beta1 must lie in [0, 1)")
        if not (0 < self.adam_beta2 < 1):
            raise ValueError("beta2 must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.batch_size < 1 or self.budget_images < 1:
            raise ValueError("batch_size and budget_images must be >= 1")
        if self.metric_every_images < 1:
            raise ValueError("metric_every_images must be >= 1")
        if self.sigma_init <= 0:
            raise ValueError("sigma_init must be positive")
        if self.ema_kimg < 0:
            raise ValueError("ema_kimg must be non-negative")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ValueError(f"generator_loss must be one of {GENERATOR_LOSSES}")


@dataclass
class TeacherConfig:
    net: NetworkConfig
    batch_size: int = 256
    budget_images: int = 1_000_000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    p_mean: float = -1.2
    p_std: float = 1.2
    seed: int = 0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)


def adam_step(flat: np.ndarray, grad: np.ndarray, opt: AdamState, lr: float,
              beta1: float, beta2: float, eps: float):
    """One Adam update; returns (new flat parameters, new optimizer state)."""
    t = opt.t + 1
    m = beta1 * opt.m + (1.0 - beta1) * grad
    v = beta2 * opt.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_flat = flat - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_flat, AdamState(m=m, v=v, t=t)


@dataclass
class TrainState:
    step: int
    images_seen: int
    phi: NetworkParams
    psi: NetworkParams
    theta: NetworkParams
    theta_ema: NetworkParams
    psi_opt: AdamState
    theta_opt: AdamState
    rng: np.random.Generator
    best_metric: float | None = None
    best_theta_ema: NetworkParams | None = None
    last_eval_images: int = -1
    acc_loss_psi: float = 0.0
    acc_loss_theta: float = 0.0
    acc_sigma: float = 0.0
    acc_count: int = 0


def pretrain_teacher(data_sampler, config: TeacherConfig,
                     log_hook=None) -> NetworkParams:
    """Train a denoiser on real data by score matching; deterministic per seed.

    ``data_sampler(rng, n)`` yields (n, data_dim) batches. A zero budget
    returns the fresh initialization unchanged.
    """
    rng = np.random.default_rng(config.seed)
    params = NetworkParams.init(config.net, rng)
    opt = AdamState.zeros(params.size)
    n_steps = config.budget_images // config.batch_size
    for step in range(n_steps):
        x = data_sampler(rng, config.batch_size)
        try:
            report, grad = dsm_loss(params, x, rng, p_mean=config.p_mean,
                                    p_std=config.p_std)
        except NonFiniteError as exc:
            raise TrainingDivergedError(step, f"teacher loss ({exc})") from exc
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(step, "teacher gradient")
        flat, opt = adam_step(params.flat, grad, opt, config.lr,
                              config.adam_beta1, config.adam_beta2,
                              config.adam_eps)
        params = params.replace(flat)
        if log_hook is not None:
            log_hook(step, (step + 1) * config.batch_size, report.value)
    return params


def init_from_teacher(phi: NetworkParams, config: SiDConfig) -> TrainState:
    """Start distillation with generator and fake score copied from the teacher."""
    copy = lambda p: NetworkParams(p.config, p.flat)
    return TrainState(
        step=0, images_seen=0, phi=phi,
        psi=copy(phi), theta=copy(phi), theta_ema=copy(phi),
        psi_opt=AdamState.zeros(phi.size),
        theta_opt=AdamState.zeros(phi.size),
        rng=np.random.default_rng(config.seed))


def psi_step(state: TrainState, config: SiDConfig) -> TrainState:
    """One fake-score update on generator samples; the generator is untouched."""
    d = state.phi.config.data_dim
    z = state.rng.standard_normal((config.batch_size, d))
    try:
        x_g = generate(state.theta, z, config.sigma_init)
        report, grad = dsm_loss(state.psi, x_g, state.rng,
                                p_mean=config.psi_p_mean, p_std=config.psi_p_std)
    except NonFiniteError as exc:
        raise TrainingDivergedError(state.step, f"fake-score loss ({exc})") from exc
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(state.step, "fake-score gradient")
    flat, state.psi_opt = adam_step(
        state.psi.flat, config.loss_scale_psi * grad, state.psi_opt,
        config.lr_psi, config.adam_beta1_psi, config.adam_beta2,
        config.adam_eps)
    state.psi = state.psi.replace(flat)
    state.acc_loss_psi += report.value
    return state


def theta_step(state: TrainState, config: SiDConfig) -> TrainState:
    """One generator update with the configured loss, then the EMA update."""
    d = state.phi.config.data_dim
    z = state.rng.standard_normal((config.batch_size, d))
    try:
        report, grad = generator_loss(
            state.phi, state.psi, state.theta, z, state.rng, config.schedule,
            kind=config.generator_loss, alpha=config.alpha,
            sigma_init=config.sigma_init,
            disable_pullbacks=config.disable_score_pullbacks)
    except NonFiniteError as exc:
        raise TrainingDivergedError(state.step, f"generator loss ({exc})") from exc
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(state.step, "generator gradient")
    flat, state.theta_opt = adam_step(
        state.theta.flat, config.loss_scale_theta * grad, state.theta_opt,
        config.lr_theta, config.adam_beta1_theta, config.adam_beta2,
        config.adam_eps)
    state.theta = state.theta.replace(flat)
    decay = 0.5 ** (config.batch_size / (config.ema_kimg * 1000.0)) \
        if config.ema_kimg > 0 else 0.0
    state.theta_ema = state.theta_ema.replace(
        decay * state.theta_ema.flat + (1.0 - decay) * state.theta.flat)
    state.step += 1
    state.images_seen += config.batch_size
    state.acc_loss_theta += report.value
    state.acc_sigma += report.sigma
    state.acc_count += 1
    return state


def train_loop(state: TrainState, config: SiDConfig, eval_fn=None):
    """Alternate fake-score and generator updates until the image budget.

    ``eval_fn(state)`` returns the selection metric for the EMA generator;
    it must not touch the training rng. Evaluations run at start, whenever
    metric_every_images more images have been processed, and at the budget;
    the best-metric EMA snapshot is retained on the state. Returns
    (state, rows) with one metrics row per evaluation.
    """
    rows = []

    def do_eval():
        metric = float(eval_fn(state)) if eval_fn is not None else float("nan")
        count = max(state.acc_count, 1)
        rows.append({
            "images_seen": state.images_seen,
            "step": state.step,
            "loss_psi": state.acc_loss_psi / count,
            "loss_theta": state.acc_loss_theta / count,
            "metric": metric,
            "alpha": config.alpha,
            "sigma_mean": state.acc_sigma / count,
        })
        state.acc_loss_psi = state.acc_loss_theta = state.acc_sigma = 0.0
        state.acc_count = 0
        state.last_eval_images = state.images_seen
        if np.isfinite(metric) and (state.best_metric is None
                                    or metric < state.best_metric):
            state.best_metric = metric
            state.best_theta_ema = NetworkParams(state.theta_ema.config,
                                                 state.theta_ema.flat)

    if state.last_eval_images < 0:
        do_eval()
    while state.images_seen < config.budget_images:
        psi_step(state, config)
        theta_step(state, config)
        due = state.images_seen - state.last_eval_images >= config.metric_every_images
        if due or state.images_seen >= config.budget_images:
            do_eval()
    return state, rows
