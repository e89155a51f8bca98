"""Render static figures from simulator artifacts.

    fwl-plots --kind profile   --in OUTDIR --out fig.png
    fwl-plots --kind survival  --in OUTDIR --out fig.png
    fwl-plots --kind yaglom    --in OUTDIR --out fig.png [--t 100]
    fwl-plots --kind laplace   --in OUTDIR --out fig.png [--t 1]
    fwl-plots --kind genealogy --in OUTDIR --out fig.png [--k 3] [--t 100]
    fwl-plots --kind reports   --in OUTDIR --out fig.png

--in points at a directory produced by the simulator CLI (profile.csv /
summary.json / reports.json / per-test raw CSVs).  A missing raw sample
file downgrades the yaglom figure to a summary-only panel with a warning
annotation; schema mismatches are hard errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import figures
from .io import SchemaError

KINDS = ("profile", "survival", "yaglom", "laplace", "genealogy", "reports")


def build_figure(kind: str, in_dir: Path, t: float | None, k: int):
    reports = in_dir / "reports.json"
    if kind == "profile":
        summary = in_dir / "summary.json"
        return figures.profile_figure(in_dir / "profile.csv",
                                      summary if summary.exists() else None)
    if kind == "reports":
        return figures.reports_figure(reports)
    if kind == "survival":
        return figures.survival_figure(reports)
    if kind == "yaglom":
        raw = in_dir / (f"yaglom_t{t:g}.csv" if t else "yaglom.csv")
        if not raw.exists():
            cands = sorted(in_dir.glob("yaglom_t*.csv"))
            raw = cands[0] if cands else None
        return figures.yaglom_figure(
            raw, reports if reports.exists() else None)
    if kind == "laplace":
        raw = in_dir / (f"feller_t{t:g}.csv" if t else "feller.csv")
        if not raw.exists():
            cands = sorted(in_dir.glob("feller_t*.csv"))
            if not cands:
                raise FileNotFoundError(f"no feller_t*.csv under {in_dir}")
            raw = cands[0]
        return figures.laplace_figure(raw, reports if reports.exists() else None)
    if kind == "genealogy":
        raw = in_dir / f"genealogy_k{k}.csv"
        if not raw.exists():
            cands = sorted(in_dir.glob("genealogy_k*.csv"))
            if not cands:
                raise FileNotFoundError(f"no genealogy_k*.csv under {in_dir}")
            raw = cands[0]
        return figures.genealogy_figure(raw, t)
    raise ValueError(f"unknown kind {kind!r}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fwl-plots", description=__doc__)
    ap.add_argument("--kind", choices=KINDS, required=True)
    ap.add_argument("--in", dest="in_dir", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--t", type=float, default=None)
    ap.add_argument("--k", type=int, default=2)
    args = ap.parse_args(argv)
    try:
        fig = build_figure(args.kind, Path(args.in_dir), args.t, args.k)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
