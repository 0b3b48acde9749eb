"""Command line entry point ``qgate-opt``.

Exit codes: 0 on success, 2 for configuration errors, 3 when a pipeline
stage fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .orchestrator import (
    PRESETS,
    SCHEMES,
    ConfigError,
    StageError,
    analyze,
    load_config,
    load_summary,
    report,
    resume,
    run,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="qgate-opt", description="Optimal control of a two-transmon phase gate.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an optimization scheme")
    r.add_argument("config")
    r.add_argument("--scheme", choices=SCHEMES)
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--out", help="output directory (overrides run.output_dir)")
    r.add_argument("--resume", metavar="RUN_DIR", help="continue an interrupted Krotov run")

    rep = sub.add_parser("report", help="tabulate finished runs")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--csv", help="also write the table as CSV")

    a = sub.add_parser("analyze", help="gate metrics of a stored pulse")
    a.add_argument("pulse_file")
    a.add_argument("config")
    a.add_argument("--preset", choices=sorted(PRESETS))
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            if args.resume:
                summary = resume(args.resume)
            else:
                cfg = load_config(args.config, scheme=args.scheme, preset=args.preset,
                                  output_dir=args.out)
                summary = run(cfg)
            print(report([summary]))
            print(f"run directory: {summary.run_dir}")
        elif args.command == "report":
            summaries = []
            for d in args.run_dirs:
                if not (Path(d) / "metrics.json").exists():
                    print(f"skipping {d}: no metrics.json", file=sys.stderr)
                    continue
                summaries.append(load_summary(d))
            if not summaries:
                print("error: no finished runs among the given directories", file=sys.stderr)
                return EXIT_CONFIG
            print(report(summaries, csv_path=args.csv))
        elif args.command == "analyze":
            cfg = load_config(args.config, preset=args.preset)
            metrics, j_geo = analyze(args.pulse_file, cfg)
            print(f"gamma    {metrics.gamma: .6f}")
            print(f"C        {metrics.concurrence:.6e}")
            print(f"eps_C    {metrics.eps_C:.6e}")
            print(f"eps_pop  {metrics.eps_pop:.6e}")
            print(f"eps_avg  {metrics.eps_avg:.6e}")
            print(f"J_geo    {j_geo:.6e}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError) as exc:
        # unreadable pulse files and similar input problems in `analyze`
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE if args.command == "analyze" else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
