"""Run every reproduction pipeline and print its gates.

Exit status is 0 only if every gate passes.
"""

import argparse
import logging
import sys
import time

from mewguide.config import EXPERIMENTS
from mewguide.experiments import output_root, reproduce


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("experiments", nargs="*", default=list(EXPERIMENTS), choices=EXPERIMENTS)
    p.add_argument("--output", default=None, help="output root (default: $MEWGUIDE_OUTPUT or runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    root = output_root(args.output)
    ok = True
    for name in args.experiments:
        t0 = time.perf_counter()
        rep = reproduce(name, root=root)
        print(f"{name} ({time.perf_counter() - t0:.0f}s)")
        for gate, res in rep.gates.items():
            print(f"  [{'PASS' if res['passed'] else 'FAIL'}] {gate}: {res['detail']}")
        ok &= rep.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
