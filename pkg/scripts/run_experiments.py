"""Run every resonance-fluorescence experiment and print a one-line verdict each.

Usage: ``python scripts/run_experiments.py [--config FILE] [--out DIR]``.
Exits non-zero when any experiment misses a tolerance.
"""
import argparse
import sys

from tclkg.cli import main as cli_main
from tclkg.experiments import EXPERIMENTS


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--out", default="out")
    args = parser.parse_args(argv)
    status = {}
    for name in sorted(EXPERIMENTS):
        cli_args = ["run-example", name, "--out", f"{args.out}/{name}"]
        if args.config:
            cli_args += ["--config", args.config]
        status[name] = cli_main(cli_args)
    for name, code in status.items():
        print(f"{name}: {'PASS' if code == 0 else 'FAIL'}")
    return int(any(status.values()))


if __name__ == "__main__":
    sys.exit(main())
