import numpy as np
import pytest

from sidlab.diffusion import (
    DiffusionSample,
    NoiseSchedule,
    conditional_score,
    heun_teacher_sample,
    karras_sigma_grid,
    perturb,
    precondition_coeffs,
    sample_psi_sigma,
    sample_theta_time,
    sample_theta_times,
    sigma_at,
)
from sidlab.oracle import GaussianWorld, analytic_denoiser

SCHED = NoiseSchedule()


def test_schedule_validates():
    with pytest.raises(ValueError):
        NoiseSchedule(sigma_min=1.0, sigma_max=0.5)
    with pytest.raises(ValueError):
        NoiseSchedule(t_max=1200)
    with pytest.raises(ValueError):
        NoiseSchedule(rho=0.0)


def test_sigma_at_endpoints():
    assert abs(sigma_at(SCHED, 0.0) - 0.002) <= 1e-12 * 0.002
    assert abs(sigma_at(SCHED, 1.0) - 80.0) <= 1e-12 * 80.0


def test_sigma_at_monotone_on_grid():
    grid = np.linspace(0.0, 1.0, 1000)
    values = sigma_at(SCHED, grid)
    assert np.all(np.diff(values) > 0)


def test_sigma_at_rejects_out_of_range():
    with pytest.raises(ValueError):
        sigma_at(SCHED, -0.01)
    with pytest.raises(ValueError):
        sigma_at(SCHED, 1.01)


def test_theta_time_range():
    rng = np.random.default_rng(0)
    t, sig = sample_theta_times(SCHED, rng, 10_000)
    assert np.all((t >= 0) & (t <= 0.8))
    assert np.all(sig >= SCHED.sigma_min * (1 - 1e-12))
    assert np.all(sig <= SCHED.sigma_max * (1 + 1e-12))


def test_theta_time_degenerate_interval():
    # t_max = 0 pins t at 0; sigma = sigma_at(0) = sigma_min by the
    # literal schedule orientation
    rng = np.random.default_rng(1)
    t, sig = sample_theta_time(NoiseSchedule(t_max=0), rng)
    assert t == 0.0
    assert abs(sig - SCHED.sigma_min) < 1e-15


def test_theta_time_mean():
    rng = np.random.default_rng(2)
    t, _ = sample_theta_times(SCHED, rng, 1_000_000)
    stderr = 0.8 / np.sqrt(12) / 1000.0
    assert abs(t.mean() - 0.4) < 3 * stderr


def test_psi_sigma_degenerate_and_positive():
    rng = np.random.default_rng(3)
    assert sample_psi_sigma(rng, p_mean=-1.2, p_std=0.0) == pytest.approx(np.exp(-1.2))
    sig = sample_psi_sigma(rng, n=10_000)
    assert np.all(sig > 0)


def test_psi_sigma_lognormal_moment():
    rng = np.random.default_rng(4)
    sig = sample_psi_sigma(rng, n=1_000_000)
    stderr = 1.2 / 1000.0
    assert abs(np.log(sig).mean() - (-1.2)) < 3 * stderr


class _FixedRng:
    def __init__(self, eps):
        self.eps = np.asarray(eps, dtype=np.float64)

    def standard_normal(self, shape):
        assert self.eps.shape == tuple(shape)
        return self.eps


def test_perturb_zero_noise():
    rng = np.random.default_rng(5)
    x = np.array([[1.0, -2.0]])
    sample = perturb(x, 0.0, rng)
    np.testing.assert_array_equal(sample.x_t, x)


def test_perturb_fixed_draw():
    sample = perturb(np.array([[0.0, 0.0]]), 2.0, _FixedRng([[1.0, -1.0]]))
    np.testing.assert_array_equal(sample.x_t, [[2.0, -2.0]])
    assert isinstance(sample, DiffusionSample)


def test_perturb_moments():
    rng = np.random.default_rng(6)
    x = np.zeros((100_000, 1))
    s = perturb(x, 1.7, rng)
    unit = (s.x_t - s.x_g) / s.sigma
    n = unit.size
    assert abs(unit.mean()) < 3 / np.sqrt(n)
    assert abs(unit.var() - 1.0) < 3 * np.sqrt(2 / (n - 1))


def test_conditional_score_cases():
    assert conditional_score(2.0, 0.0, 1.0) == -2.0
    np.testing.assert_array_equal(
        conditional_score(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 0.5),
        [0.0, 0.0])
    with pytest.raises(ZeroDivisionError):
        conditional_score(1.0, 0.0, 0.0)


def test_perturb_score_roundtrip():
    # algebraically exact; floating point leaves at most a few ulps from the
    # cancellation in (x_g - x_t)
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.standard_normal((4, 3))
        sigma = float(np.exp(rng.normal()))
        s = perturb(x, sigma, rng)
        np.testing.assert_allclose(
            conditional_score(s.x_t, s.x_g, s.sigma), -s.eps / s.sigma,
            rtol=1e-12, atol=1e-13)


def test_precondition_coeffs():
    c_skip, c_out, c_in, c_noise = precondition_coeffs(0.5, 0.5)
    assert c_skip == pytest.approx(0.5)
    assert c_in == pytest.approx(1 / np.sqrt(0.5))
    assert c_noise == pytest.approx(np.log(0.5) / 4)
    # zero-noise limit: denoiser degenerates to the identity
    c_skip, c_out, _, _ = precondition_coeffs(1e-9, 0.5)
    assert c_skip == pytest.approx(1.0, abs=1e-12)
    assert c_out == pytest.approx(0.0, abs=1e-9)
    # c_skip stays in (0, 1] across the whole sigma range
    sig = np.geomspace(1e-4, 1e4, 200)
    c_skip, _, _, _ = precondition_coeffs(sig, 0.5)
    assert np.all((c_skip > 0) & (c_skip <= 1))


def test_karras_grid_shape_and_order():
    grid = karras_sigma_grid(SCHED, 35)
    assert len(grid) == 36
    assert grid[0] == pytest.approx(80.0)
    assert grid[-2] == pytest.approx(0.002)
    assert grid[-1] == 0.0
    assert np.all(np.diff(grid) < 0)
    assert list(karras_sigma_grid(SCHED, 1)) == [80.0, 0.0]


def _gaussian_denoiser(world):
    return lambda x, s: analytic_denoiser(world, x, s)


def test_heun_preserves_gaussian_moments():
    # closed-form Gaussian flow keeps the output Gaussian; moment check
    world = GaussianWorld(dim=1, mean=np.zeros(1))
    rng = np.random.default_rng(8)
    x = heun_teacher_sample(_gaussian_denoiser(world), SCHED, 35, 100_000, 1, rng)
    assert abs(x.var() - 1.0) < 0.03
    assert abs(x.mean()) < 0.02


def test_heun_deterministic():
    world = GaussianWorld(dim=2, mean=np.zeros(2))
    a = heun_teacher_sample(_gaussian_denoiser(world), SCHED, 10, 64, 2,
                            np.random.default_rng(9))
    b = heun_teacher_sample(_gaussian_denoiser(world), SCHED, 10, 64, 2,
                            np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_heun_single_step_is_one_shot_denoise():
    world = GaussianWorld(dim=1, mean=np.zeros(1))
    rng = np.random.default_rng(10)
    x = heun_teacher_sample(_gaussian_denoiser(world), SCHED, 1, 1000, 1, rng)
    # one Euler step from sigma_max to 0 lands exactly on the denoised point
    assert abs(x.var() - (1 / (1 + 80.0 ** 2)) ** 2 * 80.0 ** 2) < 1e-3
