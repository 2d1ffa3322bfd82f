"""Command-line entry point for running experiments.

Either build the experiment from flags alone or start from a JSON config
file and override individual fields with flags.  Example:

    fedosaa --problem synthetic-logistic --algo fedosaa-svrg --algo fedsvrg \
        --rounds 50 --out trace.csv
"""

from __future__ import annotations

import argparse
import json
import sys

from fedosaa.algorithms import VARIANTS, AlgoConfig
from fedosaa.harness import (
    ExperimentConfig,
    ProblemConfig,
    emit_traces,
    run_experiment,
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fedosaa", description="Federated optimization simulator"
    )
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument(
        "--problem",
        choices=["synthetic-logistic", "synthetic-quadratic", "libsvm"],
        help="problem family (default synthetic-logistic)",
    )
    p.add_argument("--dataset", help="LIBSVM file path (implies --problem libsvm)")
    p.add_argument("--subsample", type=int, help="subsample the dataset to this size")
    p.add_argument(
        "--algo",
        action="append",
        choices=list(VARIANTS),
        help="algorithm to run (repeatable)",
    )
    p.add_argument("--eta", type=float, help="local step size")
    p.add_argument("--local-epochs", type=int, help="local epochs L")
    p.add_argument("--batch-size", type=int, help="mini-batch size (0 = full batch)")
    p.add_argument("--krylov-iters", type=int, help="CG/GMRES iterations q")
    p.add_argument("--line-search", action="store_true", help="enable Armijo line search")
    p.add_argument("--clients", type=int, help="number of clients K")
    p.add_argument("--rounds", type=int, help="maximum aggregation rounds T")
    p.add_argument("--tol", type=float, help="stop at this relative error")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--gamma", type=float, help="l2 regularization coefficient")
    p.add_argument(
        "--partition", choices=["iid", "imbalance", "label-skew"], help="client split"
    )
    p.add_argument("--out", default="trace.csv", help="output file path")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            config = ExperimentConfig.from_dict(json.load(fh))
    else:
        config = ExperimentConfig(problem=ProblemConfig())
    if args.dataset:
        config.problem = ProblemConfig(kind="libsvm", path=args.dataset,
                                       subsample=args.subsample)
    elif args.problem:
        config.problem = ProblemConfig(kind=args.problem)
        if args.subsample is not None:
            config.problem.subsample = args.subsample
    for name, attr in [
        ("clients", "n_clients"),
        ("rounds", "rounds"),
        ("tol", "tolerance"),
        ("seed", "seed"),
        ("gamma", "gamma"),
        ("partition", "partition"),
    ]:
        value = getattr(args, name)
        if value is not None:
            setattr(config, attr, value)
    if args.algo:
        config.algos = [AlgoConfig(variant=v) for v in args.algo]
    if not config.algos:
        config.algos = [AlgoConfig(variant="fedosaa-svrg")]
    for cfg in config.algos:
        if args.eta is not None:
            cfg.eta = args.eta
        if args.local_epochs is not None:
            cfg.local_epochs = args.local_epochs
        if args.batch_size is not None:
            cfg.batch_size = args.batch_size
        if args.krylov_iters is not None:
            cfg.q = args.krylov_iters
        if args.line_search:
            cfg.line_search = True
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    fmt = args.format or ("json" if str(args.out).endswith(".json") else "csv")
    traces = run_experiment(config)
    emit_traces(traces, args.out, fmt=fmt, config=config)
    for algo, trace in traces.items():
        last = trace[-1]
        status = "diverged" if last.diverged else f"rel_err={last.relative_error:.3e}"
        print(f"{algo}: {last.t} rounds, {status}, comm_floats={last.comm_floats}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
