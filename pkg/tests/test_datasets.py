import numpy as np
import pytest

from sidlab.datasets import DATASET_NAMES, GaussianMixture, make_dataset


def test_dataset_registry():
    for name in DATASET_NAMES:
        ds = make_dataset(name)
        x = ds.sample(np.random.default_rng(0), 1000)
        assert x.shape == (1000, ds.dim)
    with pytest.raises(ValueError):
        make_dataset("cifar10")


def test_gaussian_dataset_is_standard_normal():
    ds = make_dataset("gaussian")
    x = ds.sample(np.random.default_rng(1), 200_000)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.02


def test_ring8_geometry():
    ds = make_dataset("ring8")
    x = ds.sample(np.random.default_rng(2), 50_000)
    radii = np.linalg.norm(x, axis=1)
    assert abs(radii.mean() - 1.0) < 0.01
    assert radii.std() < 0.12  # tight ring, std 0.05 per component


def test_checkerboard_support():
    ds = make_dataset("checkerboard")
    x = ds.sample(np.random.default_rng(3), 50_000)
    assert np.all(np.abs(x) <= 2.0 + 1e-9)
    # cell parity: floor(x1) + floor(x2) is even on the occupied cells
    parity = (np.floor(x[:, 0]) + np.floor(x[:, 1])) % 2
    assert np.all(parity == 0)


def test_mixture_weights_validation():
    with pytest.raises(ValueError):
        GaussianMixture(means=[[0.0], [1.0]], std=1.0, weights=[0.9, 0.2])
    with pytest.raises(ValueError):
        GaussianMixture(means=[[0.0]], std=1.0, weights=[0.5, 0.5])


def test_mixture_score_single_component_matches_gaussian():
    mix = GaussianMixture(means=[[0.5, -0.5]], std=1.0, weights=[1.0])
    x = np.random.default_rng(4).standard_normal((100, 2))
    sigma = 0.7
    expected = -(x - np.array([0.5, -0.5])) / (1.0 + sigma ** 2)
    np.testing.assert_allclose(mix.diffused_score(x, sigma), expected,
                               rtol=1e-12)


def test_mixture_score_matches_finite_difference():
    mix = GaussianMixture(means=[[-1.0], [1.0]], std=0.4, weights=[0.3, 0.7])
    sigma = 0.6
    var = mix.std ** 2 + sigma ** 2

    def logpdf(x):
        comps = -0.5 * (x - mix.means.ravel()) ** 2 / var + np.log(mix.weights)
        return np.logaddexp.reduce(comps)

    h = 1e-6
    for x in np.linspace(-2.5, 2.5, 11):
        fd = (logpdf(x + h) - logpdf(x - h)) / (2 * h)
        got = mix.diffused_score(np.array([[x]]), sigma)[0, 0]
        assert got == pytest.approx(fd, abs=1e-6)
