"""Command line entry point.

Examples
--------
    shrinkball run configs/example1.cfg --workers 4
    shrinkball plot-data runs/example1/manifest.json
    shrinkball catalog
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, ExitTimeoutError
from ..models import MODEL_NOTES, OBSERVABLE_NOTES
from .config import load_config
from .run import emit_plot_data, run


def build_parser():
    p = argparse.ArgumentParser(prog="shrinkball",
                                description="Exit-scaled diffusion experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", help="flat key = value config file")
    r.add_argument("--seed", type=int, default=None, help="override master_seed")
    r.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    r.add_argument("--out-dir", default=None, help="override out_dir")
    r.add_argument("--backend", choices=("compiled", "python"), default=None)

    pd = sub.add_parser("plot-data", help="write tidy CSVs for plotting")
    pd.add_argument("manifest", nargs="+", help="manifest.json of one or more runs")
    pd.add_argument("--out-dir", default=None)

    sub.add_parser("catalog", help="list models and observables")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "catalog":
        print("models:")
        for k, v in MODEL_NOTES.items():
            print(f"  {k:14s} {v}")
        print("observables:")
        for k, v in OBSERVABLE_NOTES.items():
            print(f"  {k:14s} {v}")
        return 0
    if args.command == "plot-data":
        for path in emit_plot_data(args.manifest, args.out_dir):
            print(path)
        return 0
    try:
        cfg = load_config(args.config, {"master_seed": args.seed, "out_dir": args.out_dir})
        manifest = run(cfg, workers=args.workers, backend=args.backend)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExitTimeoutError as exc:
        print(f"timeout: {exc} (path_index={exc.path_index}, n={exc.n})", file=sys.stderr)
        return 3
    status = "PASS" if manifest["all_passed"] else "FAIL " + ", ".join(manifest["failed"])
    print(f"{cfg.run_name}: {status}")
    print(manifest["path"])
    return 0 if manifest["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
