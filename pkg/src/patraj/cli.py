"""Command-line entry point: ``patraj <verb> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

VERBS = ("prepare", "synth", "train", "export-reprs", "sequence", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="overrides [experiment] seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="BLAS threads")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="patraj", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("prepare", parents=[common], help="ingest tables, build vocabularies and folds")
    sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    sub.add_parser("train", parents=[common], help="fold-rotation training")
    p = sub.add_parser("export-reprs", parents=[common], help="export admission representations")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("sequence", parents=[common], help="train the trajectory model")
    p.add_argument("--representations", help="representation store (dense input mode); export it from the "
                   "checkpoint of the fold being tested to keep test patients unseen")
    p.add_argument("--multihot", action="store_true", help="use multi-hot diagnosis inputs")
    p = sub.add_parser("report", parents=[common], help="cross-fold summary and figures")
    p.add_argument("reports", nargs="+", help="reports.jsonl files")
    return parser


def _limit_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _overrides(args) -> dict:
    from .errors import ConfigError

    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["experiment.seed"] = str(args.seed)
    if getattr(args, "multihot", False):
        out["sequence.input_mode"] = "multi_hot"
    return out


def run(args) -> int:
    from . import pipeline
    from .config import load_config
    from .errors import ConfigError
    from .report import report

    cfg = load_config(args.config, _overrides(args))
    out = args.out
    if args.verb == "report":
        paths = report(args.reports, out or ".")
    else:
        if out is None and args.verb != "export-reprs":
            raise ConfigError(f"{args.verb} needs --out")
        if args.verb == "prepare":
            paths = pipeline.prepare(cfg, out)
        elif args.verb == "synth":
            paths = pipeline.synth(cfg, out)
        elif args.verb == "train":
            paths = {"reports": [r.to_json() for r in pipeline.train(cfg, out)]}
        elif args.verb == "sequence":
            paths = {"reports": [r.to_json() for r in
                                 pipeline.sequence(cfg, out, args.representations)]}
        else:
            target = os.path.join(out, "representations.bin") if out else "representations.bin"
            store = pipeline.export_reprs(cfg, args.checkpoint, target)
            paths = {"representations": target, "count": len(store)}
    if args.verb in ("train", "sequence"):
        for line in paths["reports"]:
            print(line)
    else:
        for key, value in paths.items():
            print(f"{key}\t{value}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        _limit_threads(args.threads)
    from .errors import PatrajError

    try:
        return run(args)
    except PatrajError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
