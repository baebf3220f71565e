import numpy as np
import pytest

from sidlab.autodiff import grad_check
from sidlab.diffusion import precondition_coeffs
from sidlab.networks import (
    NetworkConfig,
    NetworkParams,
    denoise,
    generate,
    input_gradient_pullback,
    layer_layout,
    score,
    shift_generator_mean,
    time_embedding,
)

CFG = NetworkConfig(data_dim=2, hidden_width=16, depth=2, sigma_data=0.5,
                    time_embed_dim=8)


def _random_params(cfg=CFG, seed=0):
    return NetworkParams.init(cfg, np.random.default_rng(seed))


def test_layout_total_matches_flat():
    p = NetworkParams.zeros(CFG)
    total = sum(r * c for _, (r, c) in layer_layout(CFG))
    assert p.size == total
    assert p.view("w0").shape == (CFG.data_dim + CFG.time_embed_dim,
                                  CFG.hidden_width)


def test_params_validate():
    with pytest.raises(ValueError):
        NetworkParams(CFG, np.zeros(3))
    with pytest.raises(Exception):
        NetworkParams(CFG, np.full(NetworkParams.zeros(CFG).size, np.nan))


def test_config_validates():
    with pytest.raises(ValueError):
        NetworkConfig(data_dim=0)
    with pytest.raises(ValueError):
        NetworkConfig(data_dim=1, time_embed_dim=3)


def test_time_embedding_shape():
    emb = time_embedding(np.array([0.1, -0.3]), 8)
    assert emb.shape == (2, 8)
    assert time_embedding(0.0, 0).shape == (1, 0)


def test_zeroed_mlp_is_pure_skip():
    p = NetworkParams.zeros(CFG)
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    sigma = 0.7
    c_skip, _, _, _ = precondition_coeffs(np.array([sigma]), CFG.sigma_data)
    np.testing.assert_allclose(denoise(p, x, sigma), c_skip[0] * x, rtol=1e-15)
    np.testing.assert_allclose(score(p, x, sigma),
                               (c_skip[0] - 1) / sigma ** 2 * x, rtol=1e-12)


def test_batch_equals_concatenated_rows():
    p = _random_params()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2))
    sig = np.array([0.3, 2.0])
    full = denoise(p, x, sig)
    row0 = denoise(p, x[:1], sig[0])
    row1 = denoise(p, x[1:], sig[1])
    np.testing.assert_array_equal(full, np.concatenate([row0, row1]))


def test_batch_permutation_equivariance():
    p = _random_params(seed=2)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 2))
    sig = np.exp(rng.standard_normal(5))
    perm = np.array([3, 1, 4, 0, 2])
    np.testing.assert_array_equal(denoise(p, x, sig)[perm],
                                  denoise(p, x[perm], sig[perm]))


def test_score_zero_where_denoiser_equals_input():
    # wherever denoise(x_t) == x_t the score vanishes; for the zeroed net
    # (pure skip map) that happens exactly at the origin
    p = NetworkParams.zeros(CFG)
    x = np.zeros((1, 2))
    np.testing.assert_array_equal(score(p, x, 0.8), np.zeros((1, 2)))


def test_generate_matches_definition_and_determinism():
    p = _random_params(seed=4)
    z = np.random.default_rng(5).standard_normal((3, 2))
    out = generate(p, z, 2.5)
    np.testing.assert_array_equal(out, denoise(p, 2.5 * z, 2.5))
    np.testing.assert_array_equal(out, generate(p, z, 2.5))
    single = generate(p, np.zeros((1, 2)), 2.5)
    assert single.shape == (1, 2)


def test_denoise_grad_check_wrt_params():
    cfg = NetworkConfig(data_dim=1, hidden_width=6, depth=2, sigma_data=0.5,
                        time_embed_dim=4)
    rng = np.random.default_rng(6)
    base = NetworkParams.init(cfg, rng)
    # random output layer too, so the full path is exercised
    flat = base.flat.copy()
    flat[-(cfg.hidden_width * cfg.data_dim + cfg.data_dim):] = \
        rng.standard_normal(cfg.hidden_width * cfg.data_dim + cfg.data_dim) * 0.3
    x0 = rng.standard_normal((3, 1))
    sig = np.array([0.5, 1.0, 2.0])

    def fn(point):
        p = NetworkParams(cfg, point["flat"])
        from sidlab.autodiff import ComputeGraph
        from sidlab.networks import build_denoiser, flat_gradient, param_nodes
        g = ComputeGraph()
        nodes, bindings = param_nodes(g, p, "net", mode="train")
        out = build_denoiser(g, cfg, nodes, g.constant(x0), sig)
        root = g.mean(g.mul(out, out))
        value = g.evaluate(root, bindings).item()
        return value, {"flat": flat_gradient(g.backward(root), p, "net")}

    assert grad_check(fn, {"flat": flat}, fd_step=1e-5) < 1e-5


def test_denoise_grad_check_wrt_input():
    p = _random_params(seed=7)
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((2, 2))
    sig = np.array([0.4, 1.3])
    upstream = rng.standard_normal((2, 2))

    def fn(point):
        value = float(np.sum(upstream * denoise(p, point["x"], sig)))
        return value, {"x": input_gradient_pullback(p, point["x"], sig, upstream)}

    assert grad_check(fn, {"x": x0}, fd_step=1e-5) < 1e-5


def test_pullback_zeroed_mlp_is_skip_scaling():
    p = NetworkParams.zeros(CFG)
    x = np.array([[0.3, -0.4]])
    upstream = np.array([[1.0, 2.0]])
    sigma = 0.9
    c_skip, _, _, _ = precondition_coeffs(np.array([sigma]), CFG.sigma_data)
    np.testing.assert_allclose(input_gradient_pullback(p, x, sigma, upstream),
                               c_skip[0] * upstream, rtol=1e-14)


def test_pullback_params_receive_zero_gradient():
    from sidlab.autodiff import ComputeGraph
    from sidlab.networks import build_denoiser, param_nodes

    p = _random_params(seed=9)
    g = ComputeGraph()
    nodes, bindings = param_nodes(g, p, "net", mode="stopgrad")
    x = g.leaf("x", (1, 2), param=True)
    out = build_denoiser(g, CFG, nodes, x, 1.0)
    root = g.sum(out)
    bindings["x"] = np.array([[0.1, 0.2]])
    g.evaluate(root, bindings)
    grads = g.backward(root)
    for name, _ in p.layout:
        assert np.all(grads[f"net.{name}"].data == 0.0)
    assert np.any(grads["x"].data != 0.0)


def test_shift_generator_mean():
    p = _random_params(seed=10)
    z = np.random.default_rng(11).standard_normal((4096, 2))
    delta = np.array([1.5, -0.5])
    shifted = shift_generator_mean(p, delta, 2.5)
    np.testing.assert_allclose(generate(shifted, z, 2.5),
                               generate(p, z, 2.5) + delta, rtol=0, atol=1e-12)
