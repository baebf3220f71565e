"""Versioned binary checkpoints.

Layout: magic "SIDCKPT", uint32 format version, uint32-prefixed canonical
JSON header (kind, config tree, array layout descriptors, rng state,
scalars), then the raw little-endian float64 payload of every array in
header order. Canonical JSON plus exact float bytes make save/load/save
byte-identical, and writes are atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile

import numpy as np

from .diffusion import NoiseSchedule
from .networks import NetworkConfig, NetworkParams
from .trainer import AdamState, SiDConfig, TrainState

MAGIC = b"SIDCKPT"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint, or the header is unreadable."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointLayoutError(CheckpointError):
    pass


def _config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def sid_config_from_dict(d: dict) -> SiDConfig:
    d = dict(d)
    schedule = NoiseSchedule(**d.pop("schedule"))
    return SiDConfig(schedule=schedule, **d)


def _atomic_write(path: str, blob: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write(path: str, kind: str, config: dict, arrays: dict, scalars: dict,
           rng_state: dict | None):
    header = {
        "kind": kind,
        "config": config,
        "arrays": [{"name": name, "size": int(arr.size)}
                   for name, arr in arrays.items()],
        "scalars": scalars,
        "rng": rng_state,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes()
                       for arr in arrays.values())
    blob = (MAGIC + struct.pack("<I", VERSION)
            + struct.pack("<I", len(header_bytes)) + header_bytes + payload)
    _atomic_write(path, blob)


def _read(path: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint")
    offset = len(MAGIC)
    version, = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {VERSION}")
    header_len, = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: bad header: {exc}") from exc
    offset += header_len
    arrays = {}
    for entry in header["arrays"]:
        nbytes = entry["size"] * 8
        if len(blob) < offset + nbytes:
            raise CheckpointTruncatedError(
                f"{path}: payload cut short at array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype="<f8", count=entry["size"], offset=offset).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: trailing bytes after payload")
    return header, arrays


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


def _network(config_dict: dict, flat: np.ndarray) -> NetworkParams:
    cfg = NetworkConfig(**config_dict)
    try:
        return NetworkParams(cfg, flat)
    except ValueError as exc:
        raise CheckpointLayoutError(str(exc)) from exc


# ---------------------------------------------------------------------------
# teacher checkpoints

def save_teacher(path: str, phi: NetworkParams, schedule: NoiseSchedule,
                 extra: dict | None = None):
    config = {"network": _config_dict(phi.config),
              "schedule": _config_dict(schedule)}
    if extra:
        config["teacher"] = extra
    _write(path, "teacher", config, {"phi": phi.flat}, {}, None)


def load_teacher(path: str):
    header, arrays = _read(path)
    if header["kind"] != "teacher":
        raise CheckpointFormatError(
            f"{path}: kind {header['kind']!r}, expected teacher")
    phi = _network(header["config"]["network"], arrays["phi"])
    schedule = NoiseSchedule(**header["config"]["schedule"])
    return phi, schedule


# ---------------------------------------------------------------------------
# distillation train-state checkpoints

def save_checkpoint(path: str, state: TrainState, config: SiDConfig):
    arrays = {
        "phi": state.phi.flat,
        "psi": state.psi.flat,
        "theta": state.theta.flat,
        "theta_ema": state.theta_ema.flat,
        "psi_m": state.psi_opt.m,
        "psi_v": state.psi_opt.v,
        "theta_m": state.theta_opt.m,
        "theta_v": state.theta_opt.v,
    }
    if state.best_theta_ema is not None:
        arrays["best_theta_ema"] = state.best_theta_ema.flat
    scalars = {
        "step": state.step,
        "images_seen": state.images_seen,
        "psi_t": state.psi_opt.t,
        "theta_t": state.theta_opt.t,
        "best_metric": state.best_metric,
        "last_eval_images": state.last_eval_images,
        "acc_loss_psi": state.acc_loss_psi,
        "acc_loss_theta": state.acc_loss_theta,
        "acc_sigma": state.acc_sigma,
        "acc_count": state.acc_count,
    }
    config_tree = {"sid": _config_dict(config),
                   "network": _config_dict(state.phi.config)}
    _write(path, "distill", config_tree, arrays, scalars, _rng_state(state.rng))


def load_checkpoint(path: str):
    header, arrays = _read(path)
    if header["kind"] != "distill":
        raise CheckpointFormatError(
            f"{path}: kind {header['kind']!r}, expected distill")
    net_cfg = header["config"]["network"]
    scalars = header["scalars"]
    expected = NetworkParams(NetworkConfig(**net_cfg), arrays["phi"]).size
    for name in ("psi_m", "psi_v", "theta_m", "theta_v"):
        if arrays[name].size != expected:
            raise CheckpointLayoutError(
                f"{path}: moment array {name!r} has size {arrays[name].size}, "
                f"layout needs {expected}")
    state = TrainState(
        step=int(scalars["step"]),
        images_seen=int(scalars["images_seen"]),
        phi=_network(net_cfg, arrays["phi"]),
        psi=_network(net_cfg, arrays["psi"]),
        theta=_network(net_cfg, arrays["theta"]),
        theta_ema=_network(net_cfg, arrays["theta_ema"]),
        psi_opt=AdamState(m=arrays["psi_m"], v=arrays["psi_v"],
                          t=int(scalars["psi_t"])),
        theta_opt=AdamState(m=arrays["theta_m"], v=arrays["theta_v"],
                            t=int(scalars["theta_t"])),
        rng=_restore_rng(header["rng"]),
        best_metric=scalars["best_metric"],
        best_theta_ema=(_network(net_cfg, arrays["best_theta_ema"])
                        if "best_theta_ema" in arrays else None),
        last_eval_images=int(scalars["last_eval_images"]),
        acc_loss_psi=float(scalars["acc_loss_psi"]),
        acc_loss_theta=float(scalars["acc_loss_theta"]),
        acc_sigma=float(scalars["acc_sigma"]),
        acc_count=int(scalars["acc_count"]),
    )
    return state, sid_config_from_dict(header["config"]["sid"])


# ---------------------------------------------------------------------------
# standalone generator checkpoints

def save_generator(path: str, params: NetworkParams, sigma_init: float):
    _write(path, "generator", {"network": _config_dict(params.config)},
           {"params": params.flat}, {"sigma_init": sigma_init}, None)


def load_generator(path: str):
    header, arrays = _read(path)
    if header["kind"] != "generator":
        raise CheckpointFormatError(
            f"{path}: kind {header['kind']!r}, expected generator")
    params = _network(header["config"]["network"], arrays["params"])
    return params, float(header["scalars"]["sigma_init"])


def load_generator_any(path: str, sigma_init_default: float = 2.5):
    """Load whichever checkpoint kind and return (params, sigma_init).

    Teachers act as generators through the shared initialization; distill
    states hand back the best EMA snapshot (falling back to the current EMA).
    """
    header, _ = _read(path)
    kind = header["kind"]
    if kind == "generator":
        return load_generator(path)
    if kind == "teacher":
        phi, _ = load_teacher(path)
        return phi, sigma_init_default
    if kind == "distill":
        state, config = load_checkpoint(path)
        params = state.best_theta_ema if state.best_theta_ema is not None \
            else state.theta_ema
        return params, config.sigma_init
    raise CheckpointFormatError(f"{path}: unknown kind {kind!r}")
