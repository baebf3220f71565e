"""Command-line front door.

Subcommands: train-teacher, distill, sample, verify, metrics. Outputs are
CSV files plus rendered figures on the report paths; every command is
deterministic given its seed and config. Exit codes: 0 success, 2
usage/config, 3 numeric divergence, 4 checkpoint incompatibility, 5
verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_generator_any,
    load_teacher,
    save_checkpoint,
    save_generator,
    save_teacher,
)
from .config import ConfigError, RunConfig, load_run_config
from .diffusion import sigma_at
from .metrics import (
    gaussian_frechet,
    read_metrics_csv,
    trajectory_summary,
    wasserstein_1d,
    write_metrics_csv,
)
from .networks import generate
from .trainer import TrainingDivergedError, init_from_teacher, pretrain_teacher, train_loop
from .verify import SUITE_NAMES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_VERIFY = 5

ALPHA_ABLATION_RANGE = (-0.25, 1.5)


def _make_eval_fn(run: RunConfig):
    """Training-time selection metric on the EMA generator.

    Uses rngs derived from (seed, images_seen) only, so evaluation never
    perturbs the training trajectory.
    """
    ref_rng = np.random.default_rng([run.seed, 0x5EED])
    reference = run.dataset.sample(ref_rng, run.metric_samples)

    def eval_fn(state):
        rng = np.random.default_rng([run.seed, state.images_seen, 0xE7A1])
        z = rng.standard_normal((run.metric_samples, run.dataset.dim))
        samples = generate(state.theta_ema, z, run.distill.sigma_init)
        if run.dataset.dim == 1:
            return wasserstein_1d(samples, reference)
        return gaussian_frechet(samples, reference)

    return eval_fn, reference


def cmd_train_teacher(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed)
    os.makedirs(args.out, exist_ok=True)
    history = []

    def log_hook(step, images, loss):
        if step % 50 == 0:
            history.append((step, images, loss))

    print(f"pretraining teacher on {run.dataset.name} "
          f"({run.teacher.budget_images} images, seed {run.seed})")
    phi = pretrain_teacher(run.dataset.sample, run.teacher, log_hook=log_hook)
    ckpt = os.path.join(args.out, "teacher.ckpt")
    save_teacher(ckpt, phi, run.schedule,
                 extra={"dataset": run.dataset.name, "seed": run.seed,
                        "lr": run.teacher.lr,
                        "budget_images": run.teacher.budget_images})
    with open(os.path.join(args.out, "teacher_train.csv"), "w") as fh:
        fh.write("step,images,loss\n")
        for step, images, loss in history:
            fh.write(f"{step},{images},{loss!r}\n")
    print(f"teacher checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_distill(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed)
    phi, schedule = load_teacher(args.teacher)
    config = run.distill
    if phi.config != run.network:
        print(f"note: using the teacher's architecture {phi.config}")
        run = RunConfig(dataset=run.dataset, seed=run.seed,
                        network=phi.config, schedule=run.schedule,
                        teacher=run.teacher, distill=config,
                        metric_samples=run.metric_samples)
    lo, hi = ALPHA_ABLATION_RANGE
    if not lo <= config.alpha <= hi:
        print(f"warning: alpha={config.alpha} outside the ablated range "
              f"[{lo}, {hi}]; proceeding anyway")
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        state, config = load_checkpoint(args.resume)
        if run.distill.budget_images != config.budget_images:
            config.budget_images = run.distill.budget_images
        print(f"resuming from {args.resume} at {state.images_seen} images")
    else:
        state = init_from_teacher(phi, config)
    sig_lo = sigma_at(config.schedule, 0.0)
    sig_hi = sigma_at(config.schedule, config.schedule.t_max / 1000.0)
    print(f"generator updates draw sigma in [{sig_lo:.4g}, {sig_hi:.4g}] "
          f"(t_max={config.schedule.t_max})")
    eval_fn, reference = _make_eval_fn(run)
    state, rows = train_loop(state, config, eval_fn=eval_fn)

    metrics_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(metrics_path, rows)
    save_checkpoint(os.path.join(args.out, "state.ckpt"), state, config)
    best = state.best_theta_ema if state.best_theta_ema is not None \
        else state.theta_ema
    save_generator(os.path.join(args.out, "student.ckpt"), best,
                   config.sigma_init)

    images = np.array([r["images_seen"] for r in rows], dtype=float)
    metric = np.array([r["metric"] for r in rows], dtype=float)
    best_metric = ("n/a" if state.best_metric is None
                   else f"{state.best_metric:.6g}")
    lines = [
        f"dataset: {run.dataset.name}",
        f"alpha: {config.alpha}",
        f"images processed: {state.images_seen}",
        f"final metric: {metric[-1]:.6g}",
        f"best metric: {best_metric}",
        f"sigma range for generator updates: [{sig_lo:.4g}, {sig_hi:.4g}]",
    ]
    usable = (images > 0) & (metric > 0)
    if usable.sum() >= 4:
        fit = trajectory_summary(images[usable], metric[usable],
                                 window=max(4, usable.sum() // 2))
        lines.append(f"early-window log-log slope: {fit.slope:.3f} "
                     f"(R^2 = {fit.r_squared:.3f}, {fit.n_points} points)")
    else:
        fit = None
    summary = "\n".join(lines)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    print(summary)

    from .report import save_samples_figure, save_trajectory_figure
    save_trajectory_figure(os.path.join(args.out, "trajectory.png"),
                           images, metric, fit)
    fig_rng = np.random.default_rng([run.seed, 0xF16])
    z = fig_rng.standard_normal((min(run.metric_samples, 5000),
                                 run.dataset.dim))
    save_samples_figure(os.path.join(args.out, "samples.png"),
                        generate(best, z, config.sigma_init),
                        reference[:5000],
                        title=f"{run.dataset.name}, alpha={config.alpha}")
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    params, sigma_init = load_generator_any(args.generator)
    rng = np.random.default_rng(args.seed)
    z = rng.standard_normal((args.n, params.config.data_dim))
    samples = generate(params, z, sigma_init)
    header = ",".join(f"x{i}" for i in range(samples.shape[1]))
    np.savetxt(args.out, samples, delimiter=",", header=header, comments="",
               fmt="%.17g")
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = SUITE_NAMES if args.suite == "all" else (args.suite,)
    results = run_suites(names, seed=args.seed, n=args.n)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"  [{status}] {r.name:<{width}}  {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_metrics(args) -> int:
    try:
        data = read_metrics_csv(args.log)
        fit = trajectory_summary(data["images_seen"], data["metric"],
                                 window=args.window)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.report, exist_ok=True)
    with open(os.path.join(args.report, "summary.txt"), "w") as fh:
        fh.write(f"rows: {len(data['images_seen'])}\n"
                 f"slope: {fit.slope!r}\n"
                 f"r_squared: {fit.r_squared!r}\n"
                 f"window_points: {fit.n_points}\n")
    keep = np.linspace(0, len(data["images_seen"]) - 1,
                       min(len(data["images_seen"]), args.max_points)).astype(int)
    rows = [{k: data[k][i] for k in data} for i in np.unique(keep)]
    write_metrics_csv(os.path.join(args.report, "downsampled.csv"), rows)
    from .report import save_trajectory_figure
    save_trajectory_figure(os.path.join(args.report, "trajectory.png"),
                           data["images_seen"], data["metric"], fit)
    print(f"slope {fit.slope:.4f}, R^2 {fit.r_squared:.4f}; "
          f"report written to {args.report}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sidlab",
        description="Desk-scale score-identity distillation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="pretrain a denoiser on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a teacher into a one-step generator")
    p.add_argument("--teacher", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None,
                   help="continue from a distillation state checkpoint")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("sample", help="draw one-step samples from a generator")
    p.add_argument("--generator", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="run the analytic and Monte Carlo checks")
    p.add_argument("--suite", choices=SUITE_NAMES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=20240)
    p.add_argument("--n", type=int, default=1_000_000,
                   help="Monte Carlo sample count per check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="trajectory report from a metrics log")
    p.add_argument("--log", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--window", type=int, default=None,
                   help="early-window row count for the slope fit")
    p.add_argument("--max-points", type=int, default=200)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
