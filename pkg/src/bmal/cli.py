"""Command-line interface: run a pool-based active-learning experiment,
aggregate result files into report tables, or fetch a dataset into the cache."""

from __future__ import annotations

import argparse
import sys

from .bench import BmalRunConfig, default_cache_dir, emit_report, fetch_dataset, run_bmal
from .selection import METHOD_NAMES


def _parse_batches(text: str):
    """``16x256`` means 16 batches of 256 points each."""
    try:
        count, size = text.lower().split("x")
        return tuple([int(size)] * int(count))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected <count>x<size>, e.g. 16x256, got {text!r}"
        ) from None


def _parse_widths(text: str):
    return tuple(int(w) for w in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmal",
        description="Batch-mode active learning benchmark for NN regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one active-learning experiment")
    run_p.add_argument("--data", required=True,
                       help="CSV path or synthetic:friedman:n=<int>,noise=<float>")
    run_p.add_argument("--target", default=None, help="target column for CSV data")
    run_p.add_argument("--method", default="random", choices=METHOD_NAMES)
    run_p.add_argument("--mode", default="p", choices=("p", "tp"))
    run_p.add_argument("--kernel", default="ll", help='kernel pipeline, e.g. "grad->rp(512)"')
    run_p.add_argument("--sigma2", type=float, default=1e-6)
    run_p.add_argument("--init-train", type=int, default=256)
    run_p.add_argument("--valid", type=int, default=1024)
    run_p.add_argument("--batches", type=_parse_batches, default=_parse_batches("16x256"))
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--activation", default="relu", choices=("relu", "silu"))
    run_p.add_argument("--out", required=True, help="output JSON file")
    run_p.add_argument("--widths", type=_parse_widths, default=(512, 512),
                       help="hidden layer widths, comma separated")
    run_p.add_argument("--epochs", type=int, default=256)

    rep_p = sub.add_parser("report", help="aggregate result files into CSV tables")
    rep_p.add_argument("--in", dest="in_dir", required=True)
    rep_p.add_argument("--out", dest="out_dir", required=True)

    fetch_p = sub.add_parser("fetch", help="download a dataset into the cache")
    fetch_p.add_argument("--url", required=True)
    fetch_p.add_argument("--cache", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        config = BmalRunConfig(
            data=args.data,
            target=args.target,
            method=args.method,
            mode=args.mode,
            kernel=args.kernel,
            sigma_sq=args.sigma2,
            batch_sizes=args.batches,
            n_train_init=args.init_train,
            n_valid=args.valid,
            widths=args.widths,
            activation=args.activation,
            epochs=args.epochs,
            seed=args.seed,
        )
        result = run_bmal(config)
        result.save(args.out)
        last = result.records[-1]
        print(
            f"{args.method} ({args.mode}) on {result.config['dataset']}: "
            f"final n_train={last['n_train']} rmse={last['metrics']['rmse']:.4f} "
            f"-> {args.out}"
        )
        return 0
    if args.command == "report":
        for path in emit_report(args.in_dir, args.out_dir):
            print(path)
        return 0
    if args.command == "fetch":
        cache = args.cache if args.cache is not None else default_cache_dir()
        print(fetch_dataset(args.url, cache))
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
