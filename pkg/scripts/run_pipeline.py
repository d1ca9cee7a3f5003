"""Run every subcommand in order for one preset, one output folder each.

    python scripts/run_pipeline.py --preset desk --out runs/desk
"""

import argparse
import sys
from pathlib import Path

from sts_robust.cli import COMMANDS, main


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="desk", choices=["paper", "desk"])
    ap.add_argument("--config", help="JSON config layered over the preset")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--skip", nargs="*", default=[], choices=list(COMMANDS))
    return ap.parse_args()


def run():
    args = parse_args()
    for command in COMMANDS:
        if command in args.skip:
            continue
        argv = [command, "--preset", args.preset, "--seed", str(args.seed),
                "--workers", str(args.workers), "--out", str(Path(args.out) / command)]
        if args.config:
            argv += ["--config", args.config]
        code = main(argv)
        if code:
            print(f"{command} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
