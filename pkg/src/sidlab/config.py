"""Run configuration: one YAML file per experiment.

Sections mirror the config dataclasses (network, schedule, teacher,
distill, eval); the dataset decides the data dimension and the default
data-scale constant. Unknown keys anywhere are rejected. The SID_SEED
environment variable overrides the file's seed for batch sweeps.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import yaml

from .datasets import Dataset, make_dataset
from .diffusion import NoiseSchedule
from .networks import NetworkConfig
from .trainer import SiDConfig, TeacherConfig


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: Dataset
    seed: int
    network: NetworkConfig
    schedule: NoiseSchedule
    teacher: TeacherConfig
    distill: SiDConfig
    metric_samples: int = 10_000


def _take(section: dict, allowed, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return dict(section)


def _fields(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def load_run_config(path: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a run configuration file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    top = _take(raw, ("dataset", "seed", "network", "schedule", "teacher",
                      "distill", "eval"), "top level")
    if "dataset" not in top:
        raise ConfigError(f"{path}: missing required key 'dataset'")
    try:
        dataset = make_dataset(top["dataset"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    seed = int(top.get("seed", 0))
    env_seed = os.environ.get("SID_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    if seed_override is not None:
        seed = seed_override

    try:
        net_kw = _take(top.get("network") or {},
                       ("hidden_width", "depth", "sigma_data", "time_embed_dim"),
                       "network")
        net_kw.setdefault("sigma_data", dataset.sigma_data)
        network = NetworkConfig(data_dim=dataset.dim, **net_kw)

        schedule = NoiseSchedule(**_take(top.get("schedule") or {},
                                         _fields(NoiseSchedule), "schedule"))

        teacher_allowed = [f for f in _fields(TeacherConfig)
                           if f not in ("net", "seed")]
        teacher = TeacherConfig(net=network, seed=seed,
                                **_take(top.get("teacher") or {},
                                        teacher_allowed, "teacher"))

        distill_allowed = [f for f in _fields(SiDConfig)
                           if f not in ("schedule", "seed")]
        distill = SiDConfig(schedule=schedule, seed=seed,
                            **_take(top.get("distill") or {},
                                    distill_allowed, "distill"))

        eval_kw = _take(top.get("eval") or {}, ("metric_samples",), "eval")
        metric_samples = int(eval_kw.get("metric_samples", 10_000))
        if metric_samples < dataset.dim + 1:
            raise ConfigError("eval.metric_samples too small for the metric")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    return RunConfig(dataset=dataset, seed=seed, network=network,
                     schedule=schedule, teacher=teacher, distill=distill,
                     metric_samples=metric_samples)
