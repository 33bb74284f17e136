"""Command line entry point: run, report and seed-sweep."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import RunManifest, report, run_experiment, seed_sweep


def parse_seeds(text: str) -> list[int]:
    """'3' -> [3], '0..4' -> [0, 1, 2, 3, 4], '1,5,9' -> [1, 5, 9]."""
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlslab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", type=Path)
    r.add_argument("--output", type=Path, default=None)
    p = sub.add_parser("report", help="summarize a run manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="markdown")
    s = sub.add_parser("seed-sweep", help="repeat a config over a seed range")
    s.add_argument("config", type=Path)
    s.add_argument("--seeds", type=parse_seeds, required=True)
    s.add_argument("--output", type=Path, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            path = args.manifest / "manifest.json" if args.manifest.is_dir() else args.manifest
            sys.stdout.write(report(RunManifest.from_json(path.read_text()), args.format))
            return 0
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"nlslab: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            m = run_experiment(cfg, args.output)
            sys.stdout.write(report(m, "markdown"))
            return 0 if m.ok else 1
        ms = seed_sweep(cfg, args.seeds, args.output)
    except (ValueError, RuntimeError) as exc:
        print(f"nlslab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for seed, m in zip(args.seeds, ms):
        print(f"seed {seed}: {'pass' if m.ok else 'FAIL'} ({m.config_hash})")
    return 0 if all(m.ok for m in ms) else 1


if __name__ == "__main__":
    sys.exit(main())
