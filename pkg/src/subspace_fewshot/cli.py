"""Command-line entry point ``srl``.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import NumericalError
from .evaluation import EvalConfig, evaluate, sweep_basis_size
from .feature_io import (
    SyntheticConfig, flatten, generate_synthetic_dataset, load_dataset, load_feature_grid,
    save_dataset)
from .metric import DistanceKind, distance
from .reference import reference_synthetic_config
from .subspace import basis_activation_map, extract_subspace
from .templates import Strategy

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _sizes(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sizes expects comma-separated integers, got {text!r}")


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text)


def _subspace_from_file(path: str, s: int):
    return extract_subspace(flatten(load_feature_grid(path)), s)


# -- subcommands -------------------------------------------------------------

def cmd_gen(args) -> None:
    if args.reference:
        cfg = reference_synthetic_config()
        path = save_dataset(generate_synthetic_dataset(cfg), args.out)
        print(f"wrote {cfg.num_classes * cfg.grids_per_class} grids and {path}")
        return
    try:
        cfg = SyntheticConfig(
            num_classes=args.classes, grids_per_class=args.per_class, h=args.h, w=args.w,
            d=args.d, class_rank=args.rank, background_rank=args.background_rank,
            noise_sigma=args.noise, foreground_fraction=args.foreground, seed=args.seed,
            amplitude_spread=args.amplitude_spread, clutter_rank=args.clutter_rank,
            clutter_scale=args.clutter_scale, class_overlap=args.class_overlap,
            spectrum_spread=args.spectrum_spread, class_jitter=args.class_jitter)
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    path = save_dataset(generate_synthetic_dataset(cfg), args.out)
    print(f"wrote {cfg.num_classes * cfg.grids_per_class} grids and {path}")


def cmd_extract(args) -> None:
    sub = _subspace_from_file(args.input, args.s)
    doc = {"basis": sub.basis.tolist(), "weights": sub.weights.tolist(),
           "d": sub.ambient_dim, "s": sub.basis_size}
    _write(json.dumps(doc), args.out)


def cmd_dist(args) -> None:
    a, b = _subspace_from_file(args.a, args.s), _subspace_from_file(args.b, args.s)
    print(repr(distance(a, b, args.metric)))


def cmd_activation(args) -> None:
    grid = load_feature_grid(args.input)
    sub = extract_subspace(flatten(grid), args.s)
    _write(basis_activation_map(grid, sub, args.component).to_csv(), args.out)


def _eval_config(args, basis_size: int) -> EvalConfig:
    try:
        return EvalConfig(
            ways=args.ways, shots=args.shots, queries=args.queries, episodes=args.episodes,
            basis_size=basis_size, metric=args.metric, template=args.template,
            alpha=args.alpha, iterations=args.iters, seed=args.seed, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_eval(args) -> None:
    dataset = load_dataset(args.data)
    report = evaluate(dataset, _eval_config(args, args.s))
    _write(report.to_json(), args.out)
    print(f"accuracy {100 * report.mean_accuracy:.2f} +- {100 * report.ci_half_width:.2f}% "
          f"over {len(report.episode_accuracies)} episodes", file=sys.stderr)


def cmd_sweep(args) -> None:
    if not args.sizes:
        raise UsageError("--sizes is empty")
    if len(set(args.sizes)) != len(args.sizes):
        raise UsageError(f"duplicate basis sizes in {args.sizes}")
    dataset = load_dataset(args.data)
    cfg = _eval_config(args, args.sizes[0])
    report = sweep_basis_size(dataset, args.sizes, cfg)
    _write(report.to_csv(), args.out)


# -- parser ------------------------------------------------------------------

def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory holding manifest.json")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--queries", type=int, default=15, help="query grids per class")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--metric", choices=[k.value for k in DistanceKind], default="wsd")
    p.add_argument("--template", choices=[k.value for k in Strategy], default="ds")
    p.add_argument("--alpha", type=float, default=None,
                   help="Cayley step size (default 0.1 for ps, 0.01 for ds)")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srl", description="Subspace few-shot toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic SRLF dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--h", type=int, default=5)
    p.add_argument("--w", type=int, default=5)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--background-rank", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--foreground", type=float, default=0.6)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--amplitude-spread", type=float, default=0.0)
    p.add_argument("--clutter-rank", type=int, default=0)
    p.add_argument("--clutter-scale", type=float, default=1.0)
    p.add_argument("--class-overlap", type=float, default=0.0)
    p.add_argument("--spectrum-spread", type=float, default=0.0)
    p.add_argument("--class-jitter", type=float, default=0.0)
    p.add_argument("--reference", action="store_true",
                   help="write the frozen reference dataset (other generator flags are ignored)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="subspace of one SRLF file as JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("dist", help="distance between the subspaces of two SRLF files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--metric", choices=[k.value for k in DistanceKind], default="wsd")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("activation", help="activation map of one basis component as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_activation)

    p = sub.add_parser("eval", help="episodic evaluation report as JSON")
    _eval_flags(p)
    p.add_argument("--s", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="basis-size sweep as CSV")
    _eval_flags(p)
    p.add_argument("--sizes", type=_sizes, required=True, help="e.g. 1,2,4,6,8")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"srl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"srl {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"srl {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
