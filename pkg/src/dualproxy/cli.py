"""Command line entry point: ``dualproxy {gen-data,oracle,train,eval,check}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from .archive import ArchiveError
from .checks import FAULTS, run_checks
from .harness import HarnessError, RunConfig, cmd_eval, cmd_gen_data, cmd_oracle, cmd_train
from .metrics import write_metrics_csv


def _default_threads() -> int:
    return int(os.environ.get("DPX_THREADS", "1"))


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualproxy", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a problem family and instance dataset")
    g.add_argument("--out", default="dataset.dpx")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--p", type=int, default=20)
    g.add_argument("--count", type=int, default=10_000)
    g.add_argument("--low", type=float, default=-20.0)
    g.add_argument("--high", type=float, default=20.0)
    g.add_argument("--split", type=float, default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", choices=["convex_qp", "nonconvex_sin"], default="convex_qp")

    o = sub.add_parser("oracle", help="precompute KKT-certified ground truth")
    o.add_argument("--dataset", default="dataset.dpx")
    o.add_argument("--out", default="ground_truth.dpxg")
    o.add_argument("--part", choices=["all", "train", "test"], default="all")
    o.add_argument("--threads", type=int, default=None)

    t = sub.add_parser("train", help="train a dual proxy and write metrics CSV + model")
    t.add_argument("--config", help="JSON file mirroring the run configuration")
    t.add_argument("--dataset")
    t.add_argument("--ground-truth", dest="ground_truth")
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--method", choices=["dda", "dalm"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", dest="learning_rate", type=float)
    t.add_argument("--optimizer", choices=["sgd", "adam"])
    t.add_argument("--rho0", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--rho-max", dest="rho_max", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--batch-reduction", dest="batch_reduction", choices=["mean", "sum"])
    t.add_argument("--inner-memory", dest="inner_memory", type=int)
    t.add_argument("--inner-max-iters", dest="inner_max_iters", type=int)
    t.add_argument("--inner-grad-tol", dest="inner_grad_tol", type=float)
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--strict-serial", dest="strict_serial", action="store_true", default=None)

    e = sub.add_parser("eval", help="evaluate a saved model on the test set")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", default="dataset.dpx")
    e.add_argument("--ground-truth", dest="ground_truth", default="ground_truth.dpxg")
    e.add_argument("--method", choices=["dda", "dalm"], required=True)
    e.add_argument("--rho", type=float)
    e.add_argument("--epoch", type=int, default=0)
    e.add_argument("--out", help="CSV path (default: stdout)")
    e.add_argument("--threads", type=int, default=None)

    c = sub.add_parser("check", help="run gradient and oracle self-checks")
    c.add_argument("--quick", action="store_true")
    c.add_argument("--inject-fault", dest="fault", choices=FAULTS, help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            digest = cmd_gen_data(
                args.out, n=args.n, p=args.p, count=args.count, low=args.low, high=args.high,
                seed=args.seed, split=args.split, mode=args.mode,
            )
            print(f"{args.out} sha256={digest}")
        elif args.command == "oracle":
            digest = cmd_oracle(args.dataset, args.out, part=args.part, threads=args.threads or _default_threads())
            print(f"{args.out} sha256={digest}")
        elif args.command == "train":
            overrides = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
            cfg = RunConfig.from_sources(args.config, **overrides)
            csv_path, model_path = cmd_train(cfg)
            print(f"metrics: {csv_path}\nmodel:   {model_path}")
        elif args.command == "eval":
            rec = cmd_eval(
                args.model, args.dataset, args.ground_truth, args.method, rho=args.rho,
                epoch=args.epoch, threads=args.threads or _default_threads(),
            )
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    write_metrics_csv([rec], fh)
            else:
                write_metrics_csv([rec], sys.stdout)
        elif args.command == "check":
            t0 = time.perf_counter()
            results = run_checks(quick=args.quick, fault=args.fault)
            for r in results:
                print(r.line())
            ok = all(r.passed for r in results)
            print(f"{'all checks passed' if ok else 'CHECKS FAILED'} ({time.perf_counter() - t0:.1f} s)")
            return 0 if ok else 1
    except (HarnessError, ArchiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
