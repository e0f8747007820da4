"""Command-line entry point: one subcommand per suite, plus replay.

Exit codes: 0 all verdicts pass, 1 a verdict failed (or replay differs),
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (SUITE_ALIASES, SUITES, ConfigError, ExperimentConfig,
                          HashMismatchError, load_record, metrics_equal, replay, run_dir,
                          run_suite)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output root directory")
    p.add_argument("--eps", type=_eps_list, help="comma-separated eps values")
    p.add_argument("--t", type=float, help="observation time")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--quiet", action="store_true", help="print only the verdict summary")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pullback-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUITES:
        aliases = [a for a, s in SUITE_ALIASES.items() if s == name]
        _common(sub.add_parser(name, aliases=aliases, help=f"run the {name} suite"))
    rp = sub.add_parser("replay", help="rerun a stored configuration and compare metrics")
    rp.add_argument("config_hash")
    rp.add_argument("--out", type=Path, default=Path("out"))
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    kw, params = {}, {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["output_dir"] = str(args.out)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        kw["evolution"] = cfg.evolution.replace(threads=args.threads)
    if args.t is not None:
        if "t" not in cfg.params:
            raise ConfigError(f"suite {cfg.experiment} has no observation time")
        params["t"] = args.t
    if args.eps is not None:
        if "eps_grid" in cfg.params:
            params["eps_grid"] = args.eps
        elif "epsilon" in cfg.params and len(args.eps) == 1:
            params["epsilon"] = args.eps[0]
        elif "eps0" in cfg.params and len(args.eps) == 1:
            params["eps0"] = args.eps[0]
        else:
            raise ConfigError(f"suite {cfg.experiment} does not take --eps {args.eps}")
    if params:
        kw["params"] = params
    return cfg.replace(**kw) if kw else cfg


def _summary(rec, quiet: bool) -> str:
    lines = []
    if not quiet:
        lines.append(json.dumps(rec.metrics, indent=2, sort_keys=True, default=str))
    for name, v in rec.verdicts.items():
        lines.append(f"{'PASS' if v.passed else 'FAIL'} {name}: {v.value:.6g} {v.comparison} "
                     f"{v.threshold:.6g} [{v.threshold_key}]")
    for name, err in rec.errors.items():
        lines.append(f"ERROR {name}: {err}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            old_path = args.out / args.config_hash / "record.json"
            rec = replay(args.config_hash, args.out)
            same = old_path.is_file() and metrics_equal(rec, load_record(old_path))
            print(_summary(rec, True))
            print("replay: metrics identical" if same else "replay: metrics differ")
            return 0 if (same and rec.passed) else 1
        suite = SUITE_ALIASES.get(args.command, args.command)
        if args.config is not None:
            cfg = ExperimentConfig.load(args.config)
            if cfg.experiment != suite:
                raise ConfigError(f"config is for suite {cfg.experiment!r}, not {suite!r}")
        else:
            cfg = ExperimentConfig(suite)
        cfg = _apply_overrides(cfg, args)
    except (ConfigError, HashMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rec = run_suite(cfg)
    print(_summary(rec, args.quiet))
    print(f"results: {run_dir(cfg)}")
    return 0 if rec.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
