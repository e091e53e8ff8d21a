"""Command-line surface.

Exit codes: 0 success, 1 contract/configuration errors, 2 I/O errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import NetworkConfig, TrainConfig, load_network_config, load_train_config
from .data import DataConfig, generate_split
from .errors import AffparseError
from .gradsuite import run_suite
from .train import evaluate, inspect_affinity, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affparse", description="Affinity-guided human part parsing at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic split to disk")
    p.add_argument("--root", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed-base", type=int, required=True)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--module", default="all", choices=["all", "lcm", "gem", "losses", "nnops", "tensor"])

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--net", help="network config file (key = value); defaults used if omitted")
    p.add_argument("--train", dest="train_file", help="training config file; defaults used if omitted")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a CSV report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--report", required=True)
    p.add_argument("--oracle-inject", action="store_true")

    p = sub.add_parser("inspect-affinity", help="dump affinity matrices for one sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    return parser


def _run(args) -> int:
    if args.command == "gen-data":
        seeds = generate_split(args.root, args.split, args.count, args.seed_base, DataConfig())
        print(f"wrote {len(seeds)} samples to {Path(args.root) / args.split}")
        return 0

    if args.command == "gradcheck":
        results = run_suite(args.module)
        worst = 0.0
        for name, err in results:
            status = "ok" if err <= 1e-4 else "FAIL"
            print(f"{status:4s}  {err:.3e}  {name}")
            worst = max(worst, err)
        print(f"worst relative error: {worst:.3e}")
        return 0 if worst <= 1e-4 else 1

    if args.command == "train":
        net_cfg = load_network_config(args.net) if args.net else NetworkConfig()
        train_cfg = load_train_config(args.train_file) if args.train_file else TrainConfig()
        result = train(net_cfg, train_cfg, args.data, args.out, echo=not args.quiet)
        print(f"final loss {result.final_loss:.6f}; checkpoint at {result.checkpoint_dir}")
        return 0

    if args.command == "eval":
        res = evaluate(args.ckpt, args.data, args.split, report_path=args.report,
                       oracle_inject=args.oracle_inject)
        print(f"mIoU {res.miou:.4f}  pixel_acc {res.pixel_acc:.4f}  mean_acc {res.mean_acc:.4f}")
        print(f"report written to {args.report}")
        return 0

    if args.command == "inspect-affinity":
        written = inspect_affinity(args.ckpt, args.sample, args.out)
        keys = ", ".join(sorted(written))
        print(f"wrote {keys} to {args.out}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except AffparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
