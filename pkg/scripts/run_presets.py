"""Run every preset experiment family on the standard synthetic cohort.

    python3 scripts/run_presets.py --out runs/presets [--only alpha-sweep eta-sweep]
"""
import argparse
import sys

from fedlogit.cli import PRESETS, main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="runs/presets")
    p.add_argument("--only", nargs="*", choices=sorted(PRESETS), default=sorted(PRESETS))
    p.add_argument("--workers", type=int, default=1)
    return p.parse_args()


if __name__ == "__main__":
    args = parse_args()
    for name in args.only:
        code = main(["preset", name, "--output-dir", f"{args.out}/{name}", "--workers", str(args.workers)])
        if code:
            sys.exit(code)
