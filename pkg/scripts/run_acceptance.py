"""Run the acceptance suite and print one line per criterion.

    python3 scripts/run_acceptance.py [out_dir] [--threads N] [--compare DIR]
"""

import argparse
import sys

from fracmv.acceptance import DEFAULT_SEED, run_acceptance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="acceptance_out")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--compare", default=None)
    ap.add_argument("--only", type=int, nargs="*", default=None)
    ap.add_argument("--no-plots", action="store_true")
    a = ap.parse_args()
    res = run_acceptance(a.out, a.seed, a.threads, a.compare, a.only, not a.no_plots)
    failed = [r.number for r in res if not r.passed]
    print(f"{len(res) - len(failed)}/{len(res)} criteria passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
