"""Simulate a scenario with 1 and with N threads and compare the CSVs.

    python3 scripts/check_determinism.py [scenario] [--threads N]
"""

import argparse
import sys
import tempfile
from pathlib import Path

from fracmv.acceptance import compare_dirs
from fracmv.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default="linear_1d_H07")
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--paths", type=int, default=2000)
    a = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [Path(tmp) / "t1", Path(tmp) / f"t{a.threads}"]
        for d, th in zip(dirs, (1, a.threads)):
            d.mkdir()
            runs = (["simulate", "--scenario", a.scenario, "--paths", str(a.paths)],
                    ["fbm-sample", "--paths", str(a.paths)])
            for cmd in runs:
                code = cli([*cmd, "--threads", str(th), "--out", str(d)])
                if code:
                    return code
        names, bad = compare_dirs(*dirs)
    print(f"{len(names) - len(bad)}/{len(names)} CSVs byte-identical"
          + (f"; differing: {', '.join(bad)}" if bad else ""))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
