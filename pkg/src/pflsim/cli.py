"""Command-line front end.

Subcommands:

    train          one federated training run, per-round CSV records
    sweep-epochs   every (E, R) split of a fixed epoch budget
    sweep-clients  client counts at one local epoch per round
    calibrate      noise multiplier for a budget (or epsilon for a sigma)
    bounds         degradation / utility bound tables

Exit codes: 0 success, 2 configuration or input validation, 3 numerical
divergence, 4 output I/O failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import analysis, reporting
from .config import ExperimentConfig, load_config, prepare
from .errors import ConfigError, DataFormatError, DivergedRunError, PflsimError
from .federation import resolve_schedule, run_pfl
from .privacy import AccountantConfig, PrivacyBudget, achieved_epsilon, calibrate_sigma

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("PFLSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PFLSIM_THREADS must be an integer, got {env!r}")
    return 1


def _load_experiment(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("a config file is required (--config PATH)", field="config")
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.out is not None:
        config = replace(config, output=str(args.out))
    if getattr(args, "runs", None) is not None:
        config = replace(config, runs=args.runs)
    return config


def _output_path(config: ExperimentConfig, command: str) -> Path:
    if config.output:
        return Path(config.output)
    raise ConfigError(
        f"no output path for {command}: set output in the config or pass --out",
        field="output",
    )


def _emit(out: Path, rows: list[dict], summary: dict) -> None:
    reporting.write_csv(out, rows)
    reporting.write_summary(reporting.summary_path(out), summary)


def cmd_train(args) -> int:
    config = _load_experiment(args)
    out = _output_path(config, "train")
    threads = _resolve_threads(args)
    prepared = prepare(config)
    schedule = resolve_schedule(config)

    t0 = time.perf_counter()
    result = run_pfl(config, run_index=0, prepared=prepared, schedule=schedule,
                     threads=threads)
    wall = time.perf_counter() - t0

    rows = reporting.train_rows(config, prepared, result, wall)
    composed = prepared.epsilon if result.shard_overlap == 0.0 and prepared.budget else None
    summary = {
        "command": "train",
        "config": reporting.config_echo(config, prepared),
        "final_accuracy": result.records[-1].eval.accuracy,
        "final_mean_loss": result.records[-1].eval.mean_loss,
        "epsilon": prepared.epsilon,
        "epsilon_per_round": [rec.epsilon_spent for rec in result.records],
        "shard_overlap": result.shard_overlap,
        "composed_epsilon": composed,
        "wall_time_s": wall,
    }
    _emit(out, rows, summary)
    acc = result.records[-1].eval.accuracy
    print(f"final accuracy {acc:.4f}, epsilon {reporting.fmt_cell(prepared.epsilon)}, wrote {out}")
    return EXIT_OK


def _parse_pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            e, r = token.lower().split("x")
            pairs.append((int(e), int(r)))
        except ValueError:
            raise ConfigError(f"bad (E, R) pair {token!r}; expected like 2x10", field="pairs")
    if not pairs:
        raise ConfigError("no (E, R) pairs given", field="pairs")
    return pairs


def cmd_sweep_epochs(args) -> int:
    config = _load_experiment(args)
    out = _output_path(config, "sweep-epochs")
    threads = _resolve_threads(args)
    pairs = _parse_pairs(args.pairs) if args.pairs else None

    sweep = analysis.sweep_epochs(config, pairs=pairs, threads=threads)
    rows = reporting.sweep_rows("sweep-epochs", sweep)
    summary = {
        "command": "sweep-epochs",
        "config": reporting.config_echo(sweep.config),
        "total_epochs": sweep.total_epochs,
        "settings": [
            {
                "setting": r.key,
                "method": r.method,
                "epsilon": r.epsilon,
                "mean_accuracy": r.mean_accuracy,
                "std_accuracy": r.std_accuracy,
                "mean_loss": r.mean_loss,
            }
            for r in sweep.rows
        ],
    }
    _emit(out, rows, summary)
    for r in sweep.rows:
        print(f"{r.key}: accuracy {r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep_clients(args) -> int:
    config = _load_experiment(args)
    out = _output_path(config, "sweep-clients")
    threads = _resolve_threads(args)

    sched = config.schedule
    if sched.epochs is not None and sched.epochs != 1:
        _warn(
            f"client sweep runs one local epoch per round for the best "
            f"accuracy-per-budget split; overriding epochs={sched.epochs} to 1 "
            f"(rounds = total epoch budget {sched.total()})"
        )
    ks = None
    if args.ks:
        ks = [int(tok) for tok in args.ks.split(",") if tok.strip()]
        if len(set(ks)) != len(ks):
            _warn("duplicate client counts given; deduplicating")

    sweep = analysis.sweep_clients(config, ks=ks, threads=threads)
    rows = reporting.sweep_rows("sweep-clients", sweep)
    summary = {
        "command": "sweep-clients",
        "config": reporting.config_echo(sweep.config),
        "total_epochs": sweep.total_epochs,
        "settings": [
            {
                "setting": r.key,
                "method": r.method,
                "epsilon": r.epsilon,
                "mean_accuracy": r.mean_accuracy,
                "std_accuracy": r.std_accuracy,
                "mean_loss": r.mean_loss,
                "utility_bound": r.utility_bound,
            }
            for r in sweep.rows
        ],
    }
    _emit(out, rows, summary)
    for r in sweep.rows:
        print(f"{r.key}: accuracy {r.mean_accuracy:.4f} +/- {r.std_accuracy:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if args.delta is None or not 0 < args.delta < 1:
        raise ConfigError(f"delta must be in (0, 1), got {args.delta}", field="delta")
    if args.kappa <= 0:
        raise ConfigError(f"kappa must be > 0, got {args.kappa}", field="kappa")
    if not 0 < args.q <= 1:
        raise ConfigError(f"q must be in (0, 1], got {args.q}", field="q")
    if args.total_epochs < 1:
        raise ConfigError(f"total-epochs must be >= 1, got {args.total_epochs}", field="total-epochs")
    acct = AccountantConfig(kappa=args.kappa, q=args.q, total_epochs=args.total_epochs)

    if args.sigma is not None:
        if args.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {args.sigma}", field="sigma")
        eps = achieved_epsilon(args.sigma, args.delta, acct)
        text = "inf" if math.isinf(eps) else f"{eps:#.6g}"
    else:
        if args.epsilon is None or args.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {args.epsilon}", field="epsilon")
        sigma = calibrate_sigma(PrivacyBudget(args.epsilon, args.delta), acct)
        text = f"{sigma:#.6g}"
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_bounds(args) -> int:
    if args.epochs_max < 1:
        raise ConfigError(f"epochs-max must be >= 1, got {args.epochs_max}", field="epochs-max")
    for name in ("lipschitz", "lr", "lr_ref", "clip", "clip_ref", "sigma", "param_std"):
        if getattr(args, name) < 0:
            raise ConfigError(f"{name} must be >= 0", field=name.replace("_", "-"))
    if args.batch_size < 1 or args.dim < 1:
        raise ConfigError("batch-size and dim must be >= 1")
    ks = [int(tok) for tok in args.ks.split(",") if tok.strip()]
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"client counts must be >= 1, got {args.ks!r}", field="ks")

    lines = []
    lines.append(
        f"degradation bound: lipschitz={args.lipschitz} lr={args.lr} clip={args.clip} "
        f"lr_ref={args.lr_ref} clip_ref={args.clip_ref} sigma={args.sigma} "
        f"batch_size={args.batch_size} dim={args.dim}"
    )
    lines.append(f"{'E':>4}  {'bound':>14}")
    bounds = [
        analysis.degradation_upper_bound(
            args.lipschitz, e, args.lr, args.clip, args.lr_ref, args.clip_ref,
            args.sigma, args.batch_size, args.dim,
        )
        for e in range(1, args.epochs_max + 1)
    ]
    argmin = min(range(len(bounds)), key=bounds.__getitem__)
    for i, b in enumerate(bounds):
        mark = "  *" if i == argmin else ""
        lines.append(f"{i + 1:>4}  {b:>14.6g}{mark}")

    lines.append("")
    lines.append(
        f"utility lower bound: param_std={args.param_std} lipschitz={args.u_lipschitz} "
        f"level={args.level}"
    )
    lines.append(f"{'k':>6}  {'bound':>10}")
    for k in ks:
        u = analysis.utility_lower_bound(args.param_std, args.u_lipschitz, args.level, k)
        lines.append(f"{k:>6}  {u.bound:>10.6g}")

    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="JSON experiment config")
    sub.add_argument("--seed", type=int, help="override master_seed")
    sub.add_argument("--out", type=Path, help="override the output CSV path")
    sub.add_argument("--threads", type=int,
                     help="client worker threads (or PFLSIM_THREADS)")
    sub.add_argument("--runs", type=int, help="override the number of runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pflsim",
        description="Simulate differentially private federated learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a single federated training")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-epochs", help="sweep (E, R) splits of a fixed budget")
    _add_run_flags(p)
    p.add_argument("--pairs", help="comma-separated ExR pairs, e.g. 1x20,2x10 "
                                   "(default: all factor pairs)")
    p.set_defaults(func=cmd_sweep_epochs)

    p = sub.add_parser("sweep-clients", help="sweep client counts at one epoch per round")
    _add_run_flags(p)
    p.add_argument("--ks", help="comma-separated client counts (default: 10,25,50,100)")
    p.set_defaults(func=cmd_sweep_clients)

    p = sub.add_parser("calibrate", help="noise multiplier for a privacy budget")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--total-epochs", type=int, required=True)
    p.add_argument("--sigma", type=float,
                   help="report the epsilon achieved by this sigma instead")
    p.add_argument("--out", type=Path, help="also write the result here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bounds", help="degradation and utility bound tables")
    p.add_argument("--lipschitz", type=float, default=1.0)
    p.add_argument("--epochs-max", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--lr-ref", type=float, default=0.3)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--clip-ref", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dim", type=int, default=42)
    p.add_argument("--param-std", type=float, default=1.0)
    p.add_argument("--u-lipschitz", type=float, default=1.0)
    p.add_argument("--level", type=float, default=0.5)
    p.add_argument("--ks", default="10,25,50,100")
    p.add_argument("--out", type=Path, help="also write the tables here")
    p.set_defaults(func=cmd_bounds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PflsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # Validation raised by a domain type rather than the config layer.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
