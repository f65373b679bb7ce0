"""Command line entry point: ``poisonsense <stage|run> --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .experiment import STAGES, ScenarioConfig, StageError, run_pipeline


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--jobs", type=int, help="worker processes for per-scenario solves")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="poisonsense", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", parents=[common], help="run every stage (or only --stage)")
    run.add_argument("--stage", choices=STAGES, action="append", help="restrict to this stage; repeatable")
    for s in STAGES:
        sub.add_parser(s, parents=[common], help=f"run the {s} stage only")
    return p


def _print_report(summary):
    print(f"{'budget':>8} {'kind':>10} {'n':>5} {'objective':>14} {'realized':>14} {'full-info':>12}")
    for r in summary:
        print(f"{r['budget']:>8g} {r['kind']:>10} {r['n']:>5d} {r['mean_objective']:>14.6g} "
              f"{r['mean_realized_cost']:>14.6g} {r['full_information_cost']:>12.6g}")
    print("objective = post-sensing expected cost the planner minimized; "
          "realized = true BPR cost of the routed flow")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = ScenarioConfig.from_file(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
    except (OSError, ValueError, TypeError) as e:
        print(f"error: bad config {args.config}: {e}", file=sys.stderr)
        return 2
    if args.verb == "run":
        stages = [s for s in STAGES if s in args.stage] if args.stage else list(STAGES)
    else:
        stages = [args.verb]
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            summary = run_pipeline(cfg, stages)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if summary:
        _print_report(summary)
    print(f"artifacts in {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
