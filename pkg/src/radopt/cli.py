"""Command-line entry point: ``radopt {run,grid,table,verify}``."""

import argparse
import logging
import sys
from dataclasses import fields

from .harness import (
    PAPER_ALPHAS,
    ExperimentConfig,
    config_from_mapping,
    format_table,
    grid_search,
    load_config_file,
    run,
    threshold_table,
)

# flag name -> ExperimentConfig field
_FLAGS = {
    "problem": dict(choices=("pca", "lrmc")),
    "method": dict(choices=("rsgd", "radagrad", "rrmsprop", "radam", "ramsgrad")),
    "step": dict(choices=("constant", "diminishing")),
    "alpha": dict(type=float),
    "batch": dict(type=int),
    "batch-schedule": dict(metavar="constant|exp:DELTA:PERIOD"),
    "iters": dict(type=int),
    "seeds": dict(metavar="S1,S2,..."),
    "threshold": dict(type=float),
    "data": dict(metavar="PATH|synth:k=v,..."),
    "out": dict(metavar="DIR"),
    "rank": dict(type=int),
    "manifold": dict(choices=("auto", "sphere", "stiefel", "grassmann")),
    "beta1": dict(type=float),
    "beta2": dict(type=float),
    "eps": dict(type=float),
    "cadence": dict(type=int),
    "test-fraction": dict(type=float),
    "data-seed": dict(type=int),
    "delimiter": dict(),
    "n-jobs": dict(type=int),
}


def _add_experiment_flags(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    for flag, kw in _FLAGS.items():
        p.add_argument(f"--{flag}", default=None, **kw)
    p.add_argument("--timing", dest="timing", action="store_true", default=None,
                   help="log wall-clock seconds in elapsed_s (default)")
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="write nan to elapsed_s so metric files are byte-reproducible")


def _config(args):
    mapping = load_config_file(args.config) if args.config else {}
    extra = {"alphas": mapping.pop("alphas", None)}
    names = {f.name for f in fields(ExperimentConfig)}
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            mapping[name] = val
    if isinstance(mapping.get("seeds"), str):
        mapping["seeds"] = tuple(int(s) for s in mapping["seeds"].split(",") if s.strip())
    return config_from_mapping(mapping), extra


def _parse_alphas(text):
    if not text:
        return PAPER_ALPHAS
    return tuple(float(a) for a in text.split(",") if a.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="radopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration over all seeds")
    _add_experiment_flags(p)

    p = sub.add_parser("grid", help="grid-search the initial step size")
    _add_experiment_flags(p)
    p.add_argument("--alphas", default=None,
                   help="comma-separated step sizes (default 1e-1,...,1e-8)")

    p = sub.add_parser("table", help="iterations-to-threshold table from a run directory")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--csv", metavar="PATH", help="also write the table as CSV")

    p = sub.add_parser("verify", help="run the numerical self-checks and write a report")
    p.add_argument("--out", default="verify-report", metavar="PREFIX")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        config, _ = _config(args)
        results = run(config)
        for seed, res in sorted(results.items()):
            last = res.final
            status = f"diverged ({res.reason})" if res.diverged else "ok"
            summary = (f"f_train={last.f_train:.6g} gnorm_train={last.gnorm_train:.6g}"
                       if last else "no records")
            print(f"seed {seed}: {status} {summary}")
        return 1 if all(r.diverged for r in results.values()) else 0

    if args.command == "grid":
        config, extra = _config(args)
        alphas = _parse_alphas(args.alphas or extra["alphas"])
        result = grid_search(config, alphas)
        for a in alphas:
            score = result.scores[a]
            print(f"alpha={a:g}: " + ("diverged" if score is None else f"mean f_train={score:.6g}"))
        if not result.viable:
            print("no viable step size")
            return 1
        print(f"best alpha={result.best_alpha:g}")
        return 0

    if args.command == "table":
        rows = threshold_table(args.out, args.threshold)
        print(format_table(rows))
        if args.csv:
            import csv
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["method"],
                                   lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
        return 0

    if args.command == "verify":
        from .verify import standard_checks, write_report
        checks = standard_checks(seed=args.seed)
        ok = write_report(args.out, checks)
        with open(args.out + ".txt", encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
        return 0 if ok else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
