"""Command-line entry points: bench, worker, agg, launch."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import VifusionError


def _load(path: str):
    from .bench.config import BenchmarkConfig

    return BenchmarkConfig.load(path)


def _workers(cfg, value: int | None) -> int:
    return value if value is not None else max(cfg.workers)


def cmd_bench(args) -> int:
    from .bench.suite import run_suite

    cfg = _load(args.config)
    paths = run_suite(cfg, args.out, backend=args.backend, config_path=args.config)
    for p in paths.values():
        print(p)
    return 0


def cmd_worker(args) -> int:
    from .bench.real import run_worker

    cfg = _load(args.config)
    run_worker(cfg, args.id, _workers(cfg, args.workers), args.out)
    return 0


def cmd_agg(args) -> int:
    from .bench.real import run_aggregator

    cfg = _load(args.config)
    run_aggregator(cfg, args.tier, _workers(cfg, args.workers), args.rack)
    return 0


def cmd_launch(args) -> int:
    return cmd_bench(argparse.Namespace(config=args.config, out=args.out, backend="real"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vifusion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run the bandwidth sweep and latency experiment, write CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--backend", choices=("real", "sim"), default="sim")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("worker", help="run one worker of a real-socket sweep")
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, help="worker count of this run (default: largest configured)")
    p.add_argument("--out", help="directory for the records file (worker 0 only)")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("agg", help="run an aggregation server")
    p.add_argument("--tier", choices=("rack", "core"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--rack", help="rack id for a rack-tier server (default: first rack)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_agg)

    p = sub.add_parser("launch", help="spawn every role locally over real sockets and write the report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_launch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VifusionError, OSError) as exc:
        print(f"vifusion: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
