"""``accsmbo`` command-line interface.

Every failure prints exactly one line ``error: <category>: <message>`` to
stderr and exits non-zero.  Set ``ACCSMBO_LOG_LEVEL`` (e.g. ``INFO``) for
progress logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .acquisition import fit_epdf, read_meta_records, write_epdf
from .data import gen_synthetic
from .exceptions import AccSMBOError, ConfigError
from .harness import (
    build_objective,
    emit_trace,
    load_config,
    run_benchmark,
    run_optimizer,
    trace_path,
)

LOG_ENV = "ACCSMBO_LOG_LEVEL"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {message}", file=sys.stderr)
        sys.exit(2)


def _override(cfg, args):
    changes = {}
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 1:
            raise ConfigError("--epochs must be at least 1")
        changes["epochs_budget"] = args.epochs
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = Path(args.out)
    if getattr(args, "rate", None) is not None:
        if not 0.0 <= args.rate <= 1.0:
            raise ConfigError("--rate must lie in [0, 1]")
        opts = []
        for o in cfg.optimizers:
            if o.name in ("smbo", "acc-smbo"):
                o = replace(o, settings={**o.settings, "rate": args.rate})
            opts.append(o)
        changes["optimizers"] = tuple(opts)
    return replace(cfg, **changes)


def cmd_optimize(args) -> int:
    cfg = _override(load_config(args.config), args)
    if args.optimizer is None:
        spec = cfg.optimizers[0]
    else:
        matches = [o for o in cfg.optimizers if args.optimizer in (o.label, o.name)]
        if not matches:
            raise ConfigError(f"optimizer {args.optimizer!r} not in config")
        spec = matches[0]
    seed = cfg.seeds[0]
    trace = run_optimizer(spec, build_objective(cfg), seed, cfg.epochs_budget, cfg.bounds)
    path = trace_path(cfg.output_dir, spec.label, seed)
    emit_trace(trace, path)
    lam = ";".join(format(v, ".6g") for v in trace.best_point)
    print(f"{spec.label} seed {seed}: best loss {trace.best_loss:.6g} at lambda {lam} -> {path}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _override(load_config(args.config), args)
    report = run_benchmark(cfg)
    path = Path(cfg.output_dir) / "report.txt"
    print(f"report written to {path}")
    if report.failures:
        total = len(cfg.optimizers) * len(cfg.seeds)
        cat = report.failures[0][2]
        print(f"error: {cat}: {len(report.failures)} of {total} runs failed (see {path})", file=sys.stderr)
        return 1
    return 0


def cmd_gen_data(args) -> int:
    params = {"n_samples": args.n_samples, "n_features": args.n_features,
              "sparsity": args.sparsity, "label_noise": args.label_noise}
    path = gen_synthetic("svmlight", params, args.seed, args.out)
    print(f"wrote {path}")
    return 0


def cmd_gen_meta(args) -> int:
    params = {"n_records": args.n_records, "center": args.center, "spread": args.spread,
              "delete_fraction": args.delete_fraction}
    path = gen_synthetic("meta", params, args.seed, args.out)
    print(f"wrote {path}")
    return 0


def cmd_fit_epdf(args) -> int:
    tags = None
    if args.tags is not None:
        tags = tuple(t.strip() for t in args.tags.split(","))
        if len(tags) != 3:
            raise ConfigError("--tags needs three comma-separated values")
    epdf = fit_epdf(read_meta_records(args.records), tags, bins=args.bins)
    write_epdf(epdf, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="accsmbo", description="Gradient-accelerated SMBO for hyperparameter search.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="run one optimizer on the configured objective")
    p.add_argument("--config", required=True)
    p.add_argument("--optimizer", help="label or name from the config (default: first)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("benchmark", help="run every optimizer on every seed and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gen-data", help="write a synthetic svmlight classification dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=1458)
    p.add_argument("--n-features", type=int, default=38)
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--label-noise", type=float, default=0.1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-meta", help="write synthetic metalearning records")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-records", type=int, default=200)
    p.add_argument("--center", type=float, default=0.3)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--delete-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_meta)

    p = sub.add_parser("fit-epdf", help="fit the metalearning density and write it as CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tags", help="objective,task,data tags to select")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_fit_epdf)
    return parser


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AccSMBOError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
