"""Run every config in configs/ through the CLI and summarize the manifests.

    python scripts/run_configs.py [--out runs] [name ...]
"""
import argparse
import sys
from pathlib import Path

from nlslab.cli import main as cli_main
from nlslab.experiment import RunManifest

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    args = ap.parse_args()
    configs = sorted((ROOT / "configs").glob("*.yaml"))
    if args.names:
        configs = [c for c in configs if c.stem in args.names]
    status = 0
    for cfg in configs:
        out = args.out / cfg.stem
        code = cli_main(["run", str(cfg), "--output", str(out)])
        man = RunManifest.from_json((out / "manifest.json").read_text()) if code in (0, 1) else None
        took = f"{man.wall_clock:.1f}s" if man else "-"
        print(f"{cfg.stem:14s} exit {code}  {took}", file=sys.stderr)
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
