"""Desk-scale score-identity distillation with analytic verification."""

from .autodiff import ComputeGraph, Tensor, grad_check
from .diffusion import (
    DiffusionSample,
    NoiseSchedule,
    conditional_score,
    heun_teacher_sample,
    perturb,
    precondition_coeffs,
    sample_psi_sigma,
    sample_theta_time,
    sigma_at,
)
from .networks import NetworkConfig, NetworkParams, denoise, generate, score
from .oracle import GaussianWorld, MCEstimate, ToyState, mc_estimate
from .losses import (
    LossReport,
    delta_hat,
    dsm_loss,
    l1_hat_loss,
    l2_hat_loss,
    mesm_projected_estimate,
    sid_fused_loss,
)
from .trainer import (
    SiDConfig,
    TeacherConfig,
    TrainState,
    init_from_teacher,
    pretrain_teacher,
    psi_step,
    theta_step,
    train_loop,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import (
    IdentityReport,
    check_projection_identity,
    check_theorem1,
    check_tweedie,
    gaussian_frechet,
    trajectory_summary,
    wasserstein_1d,
)
from .datasets import make_dataset

__version__ = "0.1.0"
