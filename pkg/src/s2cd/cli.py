"""Command-line interface: run, compare, diagnose, generate.

Exit codes: 0 on success, 2 for invalid specifications or arguments (reported
before any compute), 1 for runtime failures (I/O, parse errors, divergence).
"""

from __future__ import annotations

import argparse
import sys

from .dataset import DatasetFormatError, save_libsvm
from .harness import (
    ExperimentSpec,
    GeneratorParams,
    SpecError,
    compare_traces,
    diagnose,
    resolve_dataset,
    run_experiment,
)
from .problem import LossKind, RegMode, build_problem
from .solvers import DivergenceError
from .traces import TraceParseError

__all__ = ["main", "entrypoint"]


def _parse_generate(text: str) -> GeneratorParams:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            "--generate expects n,d,density,scale (e.g. 1000,100,0.1,1.0)"
        )
    try:
        return GeneratorParams(
            n=int(parts[0]), d=int(parts[1]),
            density=float(parts[2]), scale=float(parts[3]),
        )
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="path to a LibSVM-format text file")
    src.add_argument("--generate", type=_parse_generate, metavar="N,D,DENSITY,SCALE",
                     help="synthesize a dataset instead of reading one")
    p.add_argument("--loss", choices=["squared", "logistic"], default="squared")
    p.add_argument("--mu", type=float, default=1.0, help="L2 weight / convexity modulus")
    p.add_argument("--reg-mode", choices=["support", "dense"], default="support")
    p.add_argument("--gen-seed", type=int, default=0, help="seed for --generate")
    p.add_argument("--label-model", choices=["regression", "classification"],
                   default="regression", help="label model for --generate")


def _source(args) -> str | GeneratorParams:
    if args.data is not None:
        return args.data
    gen = args.generate
    return GeneratorParams(
        n=gen.n, d=gen.d, density=gen.density, scale=gen.scale,
        label_model=args.label_model, seed=args.gen_seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2cd",
        description="Semi-stochastic coordinate descent benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run solvers and write a trace file")
    _add_problem_args(run)
    run.add_argument("--methods", default="s2cd",
                     help="comma-separated list (s2cd,cd_nonuniform,gd,sgd,s2gd)")
    run.add_argument("--epsilon", type=float, default=1e-2,
                     help="target accuracy for auto-parameterization")
    run.add_argument("--h", type=float, default=None, help="stepsize override")
    run.add_argument("--m", type=int, default=None, help="inner-loop cap override")
    run.add_argument("--epochs", type=int, default=None, help="epoch count override")
    run.add_argument("--seeds", type=_parse_int_list, default=[0],
                     help="comma-separated seeds, one run per seed")
    run.add_argument("--budget-passes", type=float, default=20.0,
                     help="compute budget per run, in effective data passes")
    run.add_argument("--out", default="trace.log", help="trace file path")

    cmp_p = sub.add_parser("compare", help="summarize trace files on the pass axis")
    cmp_p.add_argument("traces", nargs="+", help="trace files over the same problem")

    diag = sub.add_parser("diagnose", help="condition report plus estimator audits")
    _add_problem_args(diag)
    diag.add_argument("--probes", type=int, default=2000, help="probes per battery")

    gen = sub.add_parser("generate", help="write a synthetic dataset to a file")
    _add_problem_args(gen)
    gen.add_argument("--out", required=True, help="output path (LibSVM format)")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
        if args.command == "generate":
            return _cmd_generate(args)
        parser.error(f"unknown command {args.command!r}")
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, TraceParseError, DivergenceError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_run(args) -> int:
    spec = ExperimentSpec(
        source=_source(args),
        loss=LossKind.from_name(args.loss),
        mu=args.mu,
        reg_mode=RegMode.from_name(args.reg_mode),
        methods=[m.strip() for m in args.methods.split(",") if m.strip()],
        seeds=args.seeds,
        epsilon=args.epsilon,
        h=args.h,
        m=args.m,
        epochs=args.epochs,
        budget_passes=args.budget_passes,
        out=args.out,
    )
    data = run_experiment(spec)
    print(f"wrote {args.out}: {len(data.runs)} run(s), "
          f"{sum(len(r.epochs) for r in data.runs)} epoch record(s)")
    return 0


def _cmd_compare(args) -> int:
    print(compare_traces(args.traces))
    return 0


def _cmd_diagnose(args) -> int:
    dataset = resolve_dataset(_source(args))
    problem = build_problem(dataset, LossKind.from_name(args.loss), args.mu,
                            RegMode.from_name(args.reg_mode))
    for line in diagnose(problem, probe_count=args.probes):
        print(line)
    return 0


def _cmd_generate(args) -> int:
    dataset = resolve_dataset(_source(args))
    save_libsvm(dataset, args.out)
    print(f"wrote {args.out}: n={dataset.n} d={dataset.d} nnz={dataset.nnz}")
    return 0


def entrypoint() -> None:
    sys.exit(main())
