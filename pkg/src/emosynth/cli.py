"""Operator-facing command line: train, generate, augment, inspect, gradcheck, report.

Exit codes are stable API: 0 success, 1 verification failure, 2
configuration error, 3 data or checkpoint error, 4 numeric divergence or
sampler exhaustion. Every command is deterministic under --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import checkpoint_identity, generate_filtered, merge_export, plan_balance
from .data import class_distribution, load_archive, load_csv, normalize
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    ExhaustionError,
    LabelError,
    PlanError,
)
from .gradcheck import run_suite
from .models import EMOTION_NAMES, generator_forward, sample_noise
from .training import TrainConfig, load_discriminator, load_generator, train
from .data import denormalize_images
from .pgm import write_pgm

_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_AUGMENT_KEYS = {"tau": "float", "policy": "str", "oversample": "int"}
_FIELD_PARSERS = {"int": int, "float": float, "str": str}


def load_config_file(path) -> dict:
    """Parse a key=value run configuration file; unknown keys are rejected."""
    values: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        if key in _TRAIN_FIELDS:
            kind = _TRAIN_FIELDS[key]
        elif key in _AUGMENT_KEYS:
            kind = _AUGMENT_KEYS[key]
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _FIELD_PARSERS[kind](raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def _load_dataset(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as f:
        magic = f.read(4)
    return load_archive(path) if magic == b"CGDS" else load_csv(path)


def _build_train_config(args) -> TrainConfig:
    values = load_config_file(args.config) if args.config else {}
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch,
        "lr": args.lr,
        "seed": args.seed,
        "beta1": args.beta1,
        "beta2": args.beta2,
        "latent_dim": args.latent,
        "base_filters": args.base_filters,
        "image_size": args.image_size,
        "sample_grid": args.sample_grid,
        "checkpoint_every": args.checkpoint_every,
        "dropout": args.dropout,
        "noise": args.noise,
        "fake_labels": args.fake_labels,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    values = {k: v for k, v in values.items() if k in _TRAIN_FIELDS}
    try:
        return TrainConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    dataset = normalize(dataset) if not dataset.normalized else dataset
    if args.resume:
        ckpt_config = load_generator_config(args.resume)
        config = ckpt_config if ckpt_config is not None else _build_train_config(args)
        if args.epochs is not None:
            config = dataclasses.replace(config, epochs=args.epochs)
    else:
        config = _build_train_config(args)
    train(config, dataset, out_dir=args.out, resume=args.resume, progress=not args.quiet)
    return 0


def load_generator_config(ckpt_path) -> TrainConfig | None:
    from .training import load_checkpoint

    return load_checkpoint(ckpt_path).train_config


def cmd_generate(args) -> int:
    if args.klass != "all":
        try:
            wanted = [int(args.klass)]
        except ValueError:
            raise ConfigError(f"--class must be 0..6 or 'all', got {args.klass!r}") from None
        if not 0 <= wanted[0] < 7:
            raise ConfigError(f"--class {wanted[0]} outside 0..6")
    else:
        wanted = list(range(7))
    gen = load_generator(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in wanted:
        rng = np.random.default_rng([args.seed, 2000 + c])
        remaining = args.count
        index = 0
        while remaining > 0:
            take = min(remaining, 64)
            z = sample_noise(rng, take, gen.arch)
            labels = np.full(take, c, dtype=np.int64)
            images = denormalize_images(generator_forward(gen, z, labels, mode="infer").data)
            for i in range(take):
                write_pgm(out_dir / f"class{c}_{index:04d}.pgm", images[i])
                index += 1
            remaining -= take
    print(f"wrote {args.count} images per class for classes {wanted} to {out_dir}")
    return 0


def cmd_augment(args) -> int:
    dataset = _load_dataset(args.data)
    if dataset.normalized:
        raise DataError(f"{args.data}: augment needs the raw byte dataset")
    stats = class_distribution(dataset)
    gen = load_generator(args.gen)
    disc = load_discriminator(args.disc)
    plan = plan_balance(stats, policy=args.policy, tau=args.tau, oversample=args.oversample)

    synthetic = {}
    rates = {}
    for c, deficit in enumerate(plan.deficits):
        if deficit == 0:
            rates[c] = 1.0
            continue
        rng = np.random.default_rng([args.seed, 3000 + c])
        images, telemetry = generate_filtered(
            gen, disc, c, deficit, plan.tau, rng, max_draws=plan.oversample * deficit
        )
        synthetic[c] = denormalize_images(images)
        rates[c] = telemetry.acceptance_rate

    manifest = {
        "tau": plan.tau,
        "policy": plan.policy,
        "seed": args.seed,
        "generator": checkpoint_identity(args.gen),
        "discriminator": checkpoint_identity(args.disc),
    }
    merged = merge_export(dataset, synthetic, args.out, manifest)
    after = class_distribution(merged)
    print(f"{'label':>5} {'emotion':<10} {'before':>8} {'after':>8} {'accept_rate':>12}")
    for i, name, count in stats.rows():
        print(f"{i:>5} {name:<10} {count:>8} {after.counts[i]:>8} {rates.get(i, 1.0):>12.4f}")
    print(f"total {after.total} -> {args.out}")
    return 0


def cmd_inspect(args) -> int:
    dataset = _load_dataset(args.data)
    stats = class_distribution(dataset)
    print(f"{'label':>5} {'emotion':<10} {'images':>8}")
    for i, name, count in stats.rows():
        print(f"{i:>5} {name:<10} {count:>8}")
    print(f"total {stats.total}  imbalance_ratio {stats.imbalance_ratio:.2f}")
    if stats.has_empty_classes:
        print("note: imbalance ratio computed over non-empty classes only")
    if args.fig:
        from . import report

        path = report.save_class_distribution(stats, args.fig)
        print(f"figure -> {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed)
    failed = False
    for name, err in results:
        status = "ok" if err < args.tol else "FAIL"
        if err >= args.tol:
            failed = True
        print(f"{name:<34} {err:.3e}  {status}")
    print(f"{'RESULT':<34} {'FAIL' if failed else 'PASS'} (tolerance {args.tol:g})")
    return 1 if failed else 0


def cmd_report(args) -> int:
    from . import report

    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = run_dir / "losses.csv"
    if not csv_path.exists():
        raise DataError(f"{csv_path}: no loss log in run directory")
    written = [report.save_loss_curves(csv_path, out_dir / "loss_curves.png")]
    samples = run_dir / "samples"
    if samples.exists():
        written.append(report.save_sample_sheet(samples, out_dir / "sample_sheet.png", args.epoch))
    for path in written:
        print(f"figure -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emosynth", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emosynth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the generator/discriminator pair")
    p.add_argument("--data", required=True, help="CSV or CGDS dataset")
    p.add_argument("--out", required=True, help="run directory for logs, samples, checkpoints")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--latent", type=int, help="latent noise width")
    p.add_argument("--base-filters", type=int, dest="base_filters")
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--sample-grid", type=int, dest="sample_grid")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--dropout", type=float)
    p.add_argument("--noise", choices=["normal", "uniform"])
    p.add_argument("--fake-labels", choices=["copy", "uniform"], dest="fake_labels")
    p.add_argument("--resume", help="trainer checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="klass", required=True, help="class index 0..6 or 'all'")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("augment", help="balance a dataset with filtered synthetic samples")
    p.add_argument("--data", required=True)
    p.add_argument("--gen", required=True, help="generator checkpoint")
    p.add_argument("--disc", required=True, help="discriminator checkpoint")
    p.add_argument("--out", required=True, help="output CGDS archive")
    p.add_argument("--tau", type=float, default=0.5, help="discriminator confidence threshold")
    p.add_argument("--policy", default="match-max", choices=["match-max"])
    p.add_argument("--oversample", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("inspect", help="print per-class counts of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--fig", help="also render a class-distribution bar chart to this path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="figure output directory (defaults to the run directory)")
    p.add_argument("--epoch", type=int, help="sample-sheet epoch (defaults to latest)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PlanError, LabelError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, ContractError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (DivergenceError, ExhaustionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
