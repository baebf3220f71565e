import struct

import numpy as np
import pytest

from sidlab.checkpoint import (
    MAGIC,
    CheckpointFormatError,
    CheckpointLayoutError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    load_generator,
    load_generator_any,
    load_teacher,
    save_checkpoint,
    save_generator,
    save_teacher,
)
from sidlab.diffusion import NoiseSchedule
from sidlab.networks import NetworkConfig, NetworkParams
from sidlab.trainer import SiDConfig, init_from_teacher, psi_step, theta_step, train_loop

NET = NetworkConfig(data_dim=1, hidden_width=8, depth=1, sigma_data=1.0,
                    time_embed_dim=4)


def _phi(seed=0):
    p = NetworkParams.init(NET, np.random.default_rng(seed))
    return p.replace(p.flat + 0.05 * np.random.default_rng(seed + 1)
                     .standard_normal(p.size))


def _config(**kw):
    base = dict(batch_size=8, budget_images=64, metric_every_images=32,
                lr_psi=1e-3, lr_theta=1e-3, seed=5)
    base.update(kw)
    return SiDConfig(**base)


def test_teacher_roundtrip(tmp_path):
    path = str(tmp_path / "teacher.ckpt")
    phi = _phi()
    save_teacher(path, phi, NoiseSchedule(t_max=700), extra={"lr": 1e-3})
    loaded, schedule = load_teacher(path)
    assert np.array_equal(loaded.flat, phi.flat)
    assert loaded.config == phi.config
    assert schedule.t_max == 700


def test_save_load_save_byte_identical(tmp_path):
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    config = _config()
    state = init_from_teacher(_phi(), config)
    psi_step(state, config)
    theta_step(state, config)
    save_checkpoint(p1, state, config)
    loaded, loaded_config = load_checkpoint(p1)
    save_checkpoint(p2, loaded, loaded_config)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_corrupted_magic(tmp_path):
    path = str(tmp_path / "x.ckpt")
    save_teacher(path, _phi(), NoiseSchedule())
    blob = bytearray(open(path, "rb").read())
    blob[:7] = b"NOTSIDC"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointFormatError, match="not a checkpoint"):
        load_teacher(path)


def test_version_mismatch(tmp_path):
    path = str(tmp_path / "x.ckpt")
    save_teacher(path, _phi(), NoiseSchedule())
    blob = bytearray(open(path, "rb").read())
    blob[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 999)
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        load_teacher(path)


def test_truncation(tmp_path):
    path = str(tmp_path / "x.ckpt")
    save_teacher(path, _phi(), NoiseSchedule())
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-16])
    with pytest.raises(CheckpointTruncatedError):
        load_teacher(path)


def test_layout_mismatch(tmp_path):
    # declare one fewer value than the network layout needs
    path = str(tmp_path / "x.ckpt")
    phi = _phi()
    save_teacher(path, phi, NoiseSchedule())
    blob = open(path, "rb").read()
    header_len, = struct.unpack_from("<I", blob, len(MAGIC) + 4)
    start = len(MAGIC) + 8
    header = blob[start:start + header_len]
    bad = header.replace(
        f'"size":{phi.size}'.encode(), f'"size":{phi.size - 1}'.encode())
    assert bad != header
    open(path, "wb").write(blob[:len(MAGIC) + 4] + struct.pack("<I", len(bad))
                           + bad + blob[start + header_len:-8])
    with pytest.raises(CheckpointLayoutError):
        load_teacher(path)


def test_resume_equals_uninterrupted(tmp_path):
    phi = _phi(seed=2)
    # one uninterrupted run to 96 images
    config_full = _config(budget_images=96)
    straight = init_from_teacher(phi, config_full)
    straight, _ = train_loop(straight, config_full)
    # interrupted at 48 images, checkpointed, resumed
    config_half = _config(budget_images=48)
    state = init_from_teacher(phi, config_half)
    state, _ = train_loop(state, config_half)
    path = str(tmp_path / "mid.ckpt")
    save_checkpoint(path, state, config_half)
    resumed, _ = load_checkpoint(path)
    resumed, _ = train_loop(resumed, config_full)
    assert np.array_equal(resumed.theta.flat, straight.theta.flat)
    assert np.array_equal(resumed.psi.flat, straight.psi.flat)
    assert np.array_equal(resumed.theta_ema.flat, straight.theta_ema.flat)
    assert np.array_equal(resumed.psi_opt.v, straight.psi_opt.v)
    assert np.array_equal(resumed.theta_opt.v, straight.theta_opt.v)
    assert resumed.rng.bit_generator.state == straight.rng.bit_generator.state
    assert resumed.images_seen == straight.images_seen == 96


def test_loaded_state_runs_identically(tmp_path):
    phi = _phi(seed=3)
    config = _config(budget_images=160)
    path = str(tmp_path / "s.ckpt")

    state = init_from_teacher(phi, config)
    for _ in range(5):
        psi_step(state, config)
        theta_step(state, config)
    save_checkpoint(path, state, config)
    loaded, _ = load_checkpoint(path)
    for s in (state, loaded):
        for _ in range(10):
            psi_step(s, config)
            theta_step(s, config)
    assert np.array_equal(state.theta.flat, loaded.theta.flat)
    assert state.rng.bit_generator.state == loaded.rng.bit_generator.state


def test_generator_roundtrip_and_dispatch(tmp_path):
    phi = _phi(seed=4)
    gen_path = str(tmp_path / "g.ckpt")
    save_generator(gen_path, phi, 2.5)
    params, sigma_init = load_generator(gen_path)
    assert np.array_equal(params.flat, phi.flat)
    assert sigma_init == 2.5

    teacher_path = str(tmp_path / "t.ckpt")
    save_teacher(teacher_path, phi, NoiseSchedule())
    params, sigma_init = load_generator_any(teacher_path)
    assert np.array_equal(params.flat, phi.flat)

    config = _config()
    state = init_from_teacher(phi, config)
    state, _ = train_loop(state, config, eval_fn=lambda s: 1.0)
    dist_path = str(tmp_path / "d.ckpt")
    save_checkpoint(dist_path, state, config)
    params, sigma_init = load_generator_any(dist_path)
    assert np.array_equal(params.flat, state.best_theta_ema.flat)
    assert sigma_init == config.sigma_init


def test_best_metric_none_roundtrip(tmp_path):
    config = _config()
    state = init_from_teacher(_phi(seed=6), config)
    path = str(tmp_path / "n.ckpt")
    save_checkpoint(path, state, config)
    loaded, _ = load_checkpoint(path)
    assert loaded.best_metric is None
    assert loaded.best_theta_ema is None
