"""Denoiser-architecture MLPs for the teacher, fake-score net, and generator.

All three networks share one architecture: an EDM-preconditioned MLP taking
the scaled input and a sinusoidal embedding of the noise level. The forward
pass is expressed on the autodiff graph so gradients flow through both the
parameters and the network input (needed for the score-gradient pullbacks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ComputeGraph, NodeRef, NonFiniteError
from .diffusion import precondition_coeffs

_CHUNK = 8192  # rows per forward evaluation, bounds intermediate memory


@dataclass(frozen=True)
class NetworkConfig:
    data_dim: int
    hidden_width: int = 128
    depth: int = 3
    sigma_data: float = 0.5
    time_embed_dim: int = 16

    def __post_init__(self):
        if self.data_dim < 1 or self.hidden_width < 1 or self.depth < 1:
            raise ValueError("data_dim, hidden_width, depth must be >= 1")
        if self.time_embed_dim < 0 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be an even non-negative int")
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")


def layer_layout(cfg: NetworkConfig) -> tuple[tuple[str, tuple[int, int]], ...]:
    """Ordered (name, shape) pairs mapping layers into the flat parameter vector."""
    in_dim = cfg.data_dim + cfg.time_embed_dim
    layout = [("w0", (in_dim, cfg.hidden_width)), ("b0", (1, cfg.hidden_width))]
    for i in range(1, cfg.depth):
        layout.append((f"w{i}", (cfg.hidden_width, cfg.hidden_width)))
        layout.append((f"b{i}", (1, cfg.hidden_width)))
    layout.append(("w_out", (cfg.hidden_width, cfg.data_dim)))
    layout.append(("b_out", (1, cfg.data_dim)))
    return tuple(layout)


class NetworkParams:
    """Flat float64 parameter store with a layer layout descriptor.

    Snapshots are immutable; updates go through ``replace``.
    """

    def __init__(self, config: NetworkConfig, flat: np.ndarray):
        self.config = config
        self.layout = layer_layout(config)
        total = sum(r * c for _, (r, c) in self.layout)
        flat = np.ascontiguousarray(flat, dtype=np.float64).ravel()
        if flat.size != total:
            raise ValueError(f"flat length {flat.size}, layout needs {total}")
        if not np.all(np.isfinite(flat)):
            raise NonFiniteError("network parameters contain NaN or Inf")
        flat = flat.copy()
        flat.flags.writeable = False
        self.flat = flat
        self._slices = {}
        offset = 0
        for name, (r, c) in self.layout:
            self._slices[name] = (offset, offset + r * c, (r, c))
            offset += r * c

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "NetworkParams":
        total = sum(r * c for _, (r, c) in layer_layout(config))
        return cls(config, np.zeros(total))

    @classmethod
    def init(cls, config: NetworkConfig, rng: np.random.Generator) -> "NetworkParams":
        """Fan-in-scaled normal init for hidden layers, zeroed output layer.

        A zero output layer makes the fresh denoiser the pure skip map
        c_skip * x, a stable starting point for score-matching training.
        """
        chunks = []
        for name, (r, c) in layer_layout(config):
            if name.startswith("b") or name == "w_out":
                chunks.append(np.zeros(r * c))
            else:
                chunks.append(rng.standard_normal(r * c) / np.sqrt(r))
        return cls(config, np.concatenate(chunks))

    def view(self, name: str) -> np.ndarray:
        start, stop, shape = self._slices[name]
        return self.flat[start:stop].reshape(shape)

    def replace(self, flat: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.config, flat)

    @property
    def size(self) -> int:
        return self.flat.size


def time_embedding(c_noise, dim: int) -> np.ndarray:
    """Sinusoidal features of the noise conditioning scalar, shape (n, dim)."""
    c = np.atleast_1d(np.asarray(c_noise, dtype=np.float64)).reshape(-1, 1)
    if dim == 0:
        return np.zeros((c.shape[0], 0))
    half = dim // 2
    freqs = 2.0 ** np.arange(half)
    angles = c * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _sigma_column(sigma, rows: int) -> np.ndarray:
    sig = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if sig.size == 1:
        sig = np.full(rows, sig[0])
    if sig.size != rows:
        raise ValueError(f"sigma length {sig.size} does not match batch {rows}")
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    return sig.reshape(-1, 1)


def param_nodes(g: ComputeGraph, params: NetworkParams, prefix: str,
                mode: str = "train"):
    """Create graph nodes for every layer of a network.

    mode "train": trainable leaves; "frozen": non-parameter leaves;
    "stopgrad": parameter leaves wrapped in stop-gradient, so backward
    reports exact zeros for them.
    """
    nodes, bindings = {}, {}
    for name, shape in params.layout:
        leaf_name = f"{prefix}.{name}"
        if mode == "train":
            node = g.leaf(leaf_name, shape, param=True)
        elif mode == "frozen":
            node = g.leaf(leaf_name, shape, param=False)
        elif mode == "stopgrad":
            node = g.stop_gradient(g.leaf(leaf_name, shape, param=True))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        nodes[name] = node
        bindings[leaf_name] = params.view(name)
    return nodes, bindings


def build_denoiser(g: ComputeGraph, cfg: NetworkConfig, nodes: dict,
                   x: NodeRef, sigma) -> NodeRef:
    """Append the preconditioned denoiser forward pass to a graph.

    x is an (n, data_dim) node; sigma a scalar or per-row vector. Returns
    the node computing c_skip * x + c_out * MLP(c_in * x, embed(c_noise)).
    """
    rows = x.shape[0]
    sig = _sigma_column(sigma, rows)
    c_skip, c_out, c_in, c_noise = precondition_coeffs(sig, cfg.sigma_data)
    h = g.mul(g.constant(c_in), x)
    if cfg.time_embed_dim > 0:
        emb = time_embedding(c_noise.ravel(), cfg.time_embed_dim)
        h = g.concat_cols([h, g.constant(emb)])
    for i in range(cfg.depth):
        h = g.silu(g.affine(h, nodes[f"w{i}"], nodes[f"b{i}"]))
    f = g.affine(h, nodes["w_out"], nodes["b_out"])
    return g.add(g.mul(g.constant(c_skip), x), g.mul(g.constant(c_out), f))


def _chunked(fn, x: np.ndarray, sigma) -> np.ndarray:
    rows = x.shape[0]
    sig = _sigma_column(sigma, rows).ravel()
    if rows <= _CHUNK:
        return fn(x, sig)
    parts = [fn(x[i:i + _CHUNK], sig[i:i + _CHUNK])
             for i in range(0, rows, _CHUNK)]
    return np.concatenate(parts, axis=0)


def denoise(params: NetworkParams, x_t: np.ndarray, sigma) -> np.ndarray:
    """Posterior-mean estimate for a batch of noisy rows."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    cfg = params.config

    def fwd(xc, sc):
        g = ComputeGraph()
        nodes, bindings = param_nodes(g, params, "net", mode="frozen")
        x = g.leaf("x", xc.shape, param=False)
        out = build_denoiser(g, cfg, nodes, x, sc)
        bindings["x"] = xc
        return g.evaluate(out, bindings).data

    return _chunked(fwd, x_t, sigma)


def score(params: NetworkParams, x_t: np.ndarray, sigma) -> np.ndarray:
    """Score estimate (denoise(x_t) - x_t) / sigma^2."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    sig = _sigma_column(sigma, x_t.shape[0])
    return (denoise(params, x_t, sigma) - x_t) / sig ** 2


def generate(params: NetworkParams, z: np.ndarray, sigma_init: float) -> np.ndarray:
    """One-step generation: denoise sigma_init * z at noise level sigma_init."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return denoise(params, sigma_init * z, sigma_init)


def input_gradient_pullback(params: NetworkParams, x_t: np.ndarray, sigma,
                            upstream: np.ndarray) -> np.ndarray:
    """upstream^T (d denoise / d x_t) with parameters under stop-gradient."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if upstream.shape != x_t.shape:
        raise ValueError(f"upstream shape {upstream.shape} != input {x_t.shape}")
    g = ComputeGraph()
    nodes, bindings = param_nodes(g, params, "net", mode="stopgrad")
    x = g.leaf("x", x_t.shape, param=True)
    out = build_denoiser(g, params.config, nodes, x, sigma)
    root = g.sum(g.mul(g.constant(upstream), out))
    bindings["x"] = x_t
    g.evaluate(root, bindings)
    return g.backward(root)["x"].data


def shift_generator_mean(params: NetworkParams, delta, sigma_init: float) -> NetworkParams:
    """Offset the output bias so one-step generation shifts by exactly delta.

    The denoiser output is c_skip x + c_out (W h + b_out), so adding
    delta / c_out(sigma_init) to b_out translates every generator output by
    delta at noise level sigma_init. Used to start distillation experiments
    from a generator whose mean is deliberately off target.
    """
    cfg = params.config
    delta = np.asarray(delta, dtype=np.float64).reshape(1, cfg.data_dim)
    _, c_out, _, _ = precondition_coeffs(np.array([sigma_init]), cfg.sigma_data)
    flat = params.flat.copy()
    start, stop, shape = params._slices["b_out"]
    flat[start:stop] = (params.view("b_out") + delta / c_out[0]).ravel()
    return params.replace(flat)


def flat_gradient(grads: dict, params: NetworkParams, prefix: str) -> np.ndarray:
    """Assemble per-layer gradients from backward() into flat-vector order."""
    chunks = [np.asarray(grads[f"{prefix}.{name}"].data).ravel()
              for name, _ in params.layout]
    return np.concatenate(chunks)
