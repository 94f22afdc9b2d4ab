"""Command line entry point: ``qmdrl train|eval|compare|plot``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import ConfigBundle, load_bundle
from .errors import ConfigError, InvalidArgumentError, NumericalError


def _run_list(text: str) -> list[str]:
    ids = [s.strip() for s in text.split(",") if s.strip()]
    if not ids:
        raise argparse.ArgumentTypeError("expected a comma-separated list of run ids")
    return ids


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmdrl", description=__doc__)
    parser.add_argument("--runs-dir", default=str(harness.DEFAULT_RUNS_DIR), help="run directory root")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy per drone and persist the run")
    p.add_argument("--config", help="INI config file (defaults if omitted)")
    p.add_argument("--policy", choices=("quantum", "classical"), default="quantum")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-id", required=True)

    p = sub.add_parser("eval", help="greedy evaluation with the malfunction scenario")
    p.add_argument("--run-id", required=True)
    p.add_argument("--episodes", type=int, default=10)

    p = sub.add_parser("compare", help="final-window comparison table")
    p.add_argument("--runs", type=_run_list, required=True)

    p = sub.add_parser("plot", help="SVG learning curves")
    p.add_argument("--runs", type=_run_list, required=True)
    p.add_argument("--metric", choices=harness.METRICS, default="reward")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=10, help="moving-average window (display only)")
    return parser


def _dispatch(args) -> int:
    if args.command == "train":
        bundle = load_bundle(args.config) if args.config else ConfigBundle()
        arts = harness.run(bundle, args.policy, args.seed, args.run_id, args.runs_dir)
        if arts.failure:
            print(f"error: run {args.run_id} aborted: {arts.failure['message']}", file=sys.stderr)
            return 1
        s = arts.summary
        print(
            f"{args.run_id}: {s['episodes']} episodes, final-{s['window']} reward "
            f"{s['final_total_reward_mean']:.4f} ± {s['final_total_reward_std']:.4f}"
            if s["episodes"]
            else f"{args.run_id}: 0 episodes"
        )
    elif args.command == "eval":
        result = harness.evaluate_run(args.run_id, args.episodes, args.runs_dir)
        print(json.dumps({k: v for k, v in result.items() if k != "malfunction_response"}, indent=2))
    elif args.command == "compare":
        print(harness.format_report(harness.compare(args.runs, args.runs_dir)))
    elif args.command == "plot":
        print(harness.plot(args.runs, args.metric, args.out, args.window, args.runs_dir))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, InvalidArgumentError, NumericalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
