"""Command-line entry point: ``tsc gen-flow|baseline|train|eval|report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .controllers import CONTROLLERS
from .flows import PATTERNS, FlowSynthesisSpec
from .runner import (LEARNER, ConfigError, RunConfig, evaluate_methods, export_reports, generate_flow,
                     run_baseline, run_training)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--network", help="network spec file (grid <rows> <cols> [lane_length_m])")
    p.add_argument("--flow", help="flow schedule CSV")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory (or file for gen-flow)")
    p.add_argument("--config", help="JSON run config; command-line flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-flow", help="synthesize a (fluctuating) flow schedule")
    _common(p)
    p.add_argument("--pattern", choices=PATTERNS)
    p.add_argument("--vehicles", type=int)
    p.add_argument("--resample-fraction", type=float)
    p.add_argument("--fluctuation-factor", type=int)

    p = sub.add_parser("baseline", help="run a classical controller")
    _common(p)
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("train", help="train the NL-TSC policy with PPO")
    _common(p)
    p.add_argument("--controller", choices=[LEARNER], default=LEARNER,
                   help="accepted for symmetry; training always uses the learner")
    p.add_argument("--iterations", type=int)
    p.add_argument("--mixing", choices=("learned", "softmax", "hop1", "hop2", "none"))
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint and/or controllers side by side")
    _common(p)
    p.add_argument("--controller", action="append", choices=[*CONTROLLERS, LEARNER],
                   help="method to include (repeatable); default: all")
    p.add_argument("--checkpoint", help="training run directory or checkpoint path")
    p.add_argument("--episodes", type=int)
    p.add_argument("--sampled", action="store_true", help="sample actions instead of argmax")

    p = sub.add_parser("report", help="export correlation, value-error and mixing-matrix CSVs")
    p.add_argument("--run", required=True, help="finished run directory")
    p.add_argument("--out", help="report directory (default <run>/reports)")
    return parser


def _run_config(args, **extra) -> RunConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("network", "flow", "seed", "out"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    for key, val in extra.items():
        if val is not None:
            base[key] = val
    if "network" not in base or "out" not in base:
        raise ConfigError("--network and --out are required (directly or through --config)")
    try:
        return RunConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-flow":
            spec_d = json.loads(Path(args.config).read_text()) if args.config else {}
            for key, attr in (("pattern", "pattern"), ("total_vehicles", "vehicles"), ("seed", "seed"),
                              ("resample_fraction", "resample_fraction"),
                              ("fluctuation_factor", "fluctuation_factor")):
                if getattr(args, attr) is not None:
                    spec_d[key] = getattr(args, attr)
            if not args.network or not args.out:
                raise ConfigError("gen-flow needs --network and --out")
            stats = generate_flow(args.network, FlowSynthesisSpec(**spec_d), args.out)
            print(json.dumps({"vehicles": stats["vehicles"], "base": stats["base"], "flow": stats["flow"]}))
        elif args.command == "baseline":
            cfg = _run_config(args, controller=args.controller, episodes=args.episodes)
            report = run_baseline(cfg)
            print(json.dumps({"method": report["method"], "average_travel_time": report["average_travel_time_mean"]}))
        elif args.command == "train":
            cfg = _run_config(args)
            learner = dict(cfg.learner or {})
            if args.iterations is not None:
                learner["iterations"] = args.iterations
            if args.mixing is not None:
                learner["mixing"] = args.mixing
            cfg.learner = learner
            cfg.controller = None
            result = run_training(cfg, resume=args.resume)
            print(json.dumps({"final_travel_time": result.final_travel_time}))
        elif args.command == "eval":
            cfg = _run_config(args, episodes=args.episodes)
            methods = args.controller or ([*CONTROLLERS, LEARNER] if args.checkpoint else list(CONTROLLERS))
            report = evaluate_methods(cfg, methods, args.checkpoint, args.sampled)
            for row in report["table"]:
                print(f"{row['method']:12s} {row['mean']} ± {row['std']}")
        elif args.command == "report":
            for path in export_reports(args.run, args.out):
                print(path)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"tsc: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
