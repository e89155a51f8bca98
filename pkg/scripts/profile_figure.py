#!/usr/bin/env python3
"""Produce the population-profile figure for a chosen drift.

Runs the spectral subcommand, then renders the profile panel with the
plots package (install both: `pip install -e .` and `pip install -e
plots/`).

    python3 scripts/profile_figure.py --beta 0.995 --out out/profile995
"""

import argparse
import subprocess
import sys
from pathlib import Path


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--beta", type=float, default=0.995)
    ap.add_argument("--out", type=str, default="out/profile")
    ap.add_argument("--grid", type=int, default=2048)
    args = ap.parse_args()
    out = Path(args.out)
    rc = subprocess.run([sys.executable, "-m", "fwl.cli", "spectral",
                         "--beta", str(args.beta), "--grid", str(args.grid),
                         "--out", str(out)]).returncode
    if rc:
        return rc
    return subprocess.run([sys.executable, "-m", "fwlplots.cli",
                           "--kind", "profile", "--in", str(out),
                           "--out", str(out / "profile.png")]).returncode


if __name__ == "__main__":
    sys.exit(main())
