"""Command-line entry point.

Usage::

    destress-sim run --config exp.json [--set hyperparams.eta=0.5] [--print-config]
    destress-sim compare --configs a.json b.json --budget comm=2000 [--eta-grid 1,0.1,0.01]
    destress-sim check-mixing --topology path --n 20
    destress-sim gradcheck --model reg_logistic

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness
from .errors import ConfigInvalid, NonFiniteError, SimulatorError
from .model import MlpModel, RegLogisticModel, Sample, gradient_error

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _set_dotted(d: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def _config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {args.config}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{args.config}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigInvalid(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(raw, key, value)
    if args.algorithm:
        raw["algorithm"] = args.algorithm
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.trace:
        raw["trace_path"] = args.trace
    bounds = {"max_comm": args.max_comm, "max_ifo": args.max_ifo, "max_outer": args.max_outer}
    if any(v is not None for v in bounds.values()):
        raw["budget"] = {k: v for k, v in bounds.items() if v is not None}
    return harness.parse_config(raw)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if args.print_config:
        sys.stdout.write(cfg.to_json())
    trace = harness.run_experiment(cfg)
    last = trace.rows[-1]
    print(f"# {cfg.algorithm}: comm_rounds={last.comm_rounds} ifo_strict={last.ifo_strict} "
          f"grad_norm_sq={last.grad_norm_sq:.6e} train_loss={last.train_loss:.6f}", file=sys.stderr)
    if cfg.trace_path is None:
        sys.stdout.write(trace.to_csv())
    if args.plot:
        from .plotting import render_report_figures

        out = Path(args.plot)
        for p in render_report_figures({cfg.algorithm: trace}, out):
            print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfgs = [harness.load_config(p) for p in args.configs]
    axis, budget = harness.parse_budget(args.budget)
    grid = [float(v) for v in args.eta_grid.split(",")] if args.eta_grid else None
    labels = [Path(p).stem for p in args.configs]
    rows, traces = harness.compare_suite(cfgs, axis, budget, grid, labels)
    text = harness.summary_csv(rows)
    if args.out:
        harness.write_summary(rows, args.out)
    else:
        sys.stdout.write(text)
    if args.figures:
        from .plotting import render_report_figures

        for p in render_report_figures(traces, args.figures, axis, budget):
            print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_check_mixing(args: argparse.Namespace) -> int:
    report = harness.check_mixing(args.topology, args.n, p=args.p, rows=args.rows, cols=args.cols,
                                  seed=args.seed, construction="csv" if args.mixing_csv else "metropolis",
                                  path=args.mixing_csv)
    for key in ("kind", "n", "edges", "construction", "alpha", "spectral_gap", "gap_order"):
        value = report[key]
        print(f"{key},{value!r}" if isinstance(value, float) else f"{key},{value}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    if args.model == "reg_logistic":
        model = RegLogisticModel(args.dim, args.lam)
        tol = args.tol if args.tol is not None else 1e-5
    else:
        model = MlpModel(args.dim, args.hidden, args.classes)
        tol = args.tol if args.tol is not None else 1e-4
    worst = 0.0
    for _ in range(args.points):
        x = rng.standard_normal(model.dim)
        f = rng.standard_normal(args.dim)
        f /= np.linalg.norm(f)
        label = float(rng.integers(0, 2 if args.model == "reg_logistic" else args.classes))
        worst = max(worst, gradient_error(model, x, Sample(f, label), args.step))
    ok = worst <= tol
    print(f"model,{args.model}\npoints,{args.points}\nmax_rel_error,{worst!r}\ntol,{tol!r}\n"
          f"result,{'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="destress-sim", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write its trace")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config field by dotted path, value parsed as JSON")
    run.add_argument("--algorithm", choices=harness.ALGORITHMS)
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", help="trace CSV path (stdout if no path is configured)")
    run.add_argument("--max-comm", type=int)
    run.add_argument("--max-ifo", type=int)
    run.add_argument("--max-outer", type=int)
    run.add_argument("--print-config", action="store_true", help="print the resolved config first")
    run.add_argument("--plot", metavar="DIR", help="also render figures into DIR")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run several configs at a matched budget")
    cmp_.add_argument("--configs", nargs="+", required=True)
    cmp_.add_argument("--budget", required=True, help="comm=<k>, comm_strict=<k>, ifo=<k> or ifo_lean=<k>")
    cmp_.add_argument("--eta-grid", help="comma-separated step sizes to tune over")
    cmp_.add_argument("--out", help="summary CSV path (stdout by default)")
    cmp_.add_argument("--figures", metavar="DIR", help="render comparison figures into DIR")
    cmp_.set_defaults(func=cmd_compare)

    chk = sub.add_parser("check-mixing", help="measure the mixing rate of a topology")
    chk.add_argument("--topology", required=True)
    chk.add_argument("--n", type=int, required=True)
    chk.add_argument("--p", type=float)
    chk.add_argument("--rows", type=int)
    chk.add_argument("--cols", type=int)
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--mixing-csv", help="load the matrix from a dense CSV instead of Metropolis weights")
    chk.set_defaults(func=cmd_check_mixing)

    grad = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    grad.add_argument("--model", choices=("reg_logistic", "mlp"), required=True)
    grad.add_argument("--points", type=int, default=50)
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--dim", type=int, default=10, help="feature dimension")
    grad.add_argument("--hidden", type=int, default=8)
    grad.add_argument("--classes", type=int, default=10)
    grad.add_argument("--lambda", dest="lam", type=float, default=0.01)
    grad.add_argument("--step", type=float, default=1e-6)
    grad.add_argument("--tol", type=float)
    grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
