"""Figure builders: artifact data in, matplotlib Figure out.

Rendering is pure (fixed size, dpi and style; no timestamps), so the
same inputs give identical images up to font availability.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import SchemaError, read_csv, read_json

FIG_KW = dict(figsize=(8.0, 5.0), dpi=120)


def profile_figure(profile_csv, summary_json=None):
    """Stable configuration, reproductive value and cumulative variance.

    Overlays h_tilde (solid), h (dotted) and Sigma^2(z)/Sigma^2(L)
    (dashed) on [0, L], with the best-class boundary marked when the
    summary carries one.
    """
    cols = read_csv(profile_csv)
    x = cols["x"]
    s2 = np.maximum(cols["Sigma_sq_cum"], 0.0)
    s2 = s2 / s2[-1] if s2[-1] > 0 else s2
    fig, ax = plt.subplots(**FIG_KW)
    ax.plot(x, cols["h_tilde"] / np.max(cols["h_tilde"]), "r-",
            label="stable configuration (scaled)")
    ax.plot(x, cols["h"] / np.max(cols["h"]), "b:",
            label="reproductive value (scaled)")
    ax.plot(x, s2, "--", color="orange", label="cumulative variance share")
    if summary_json is not None:
        summary = read_json(summary_json)
        if summary.get("A_N"):
            ax.axvline(summary["A_N"], color="green", lw=1,
                       label="best-class boundary")
    ax.set_xlabel("position")
    ax.set_ylabel("scaled value")
    ax.set_ylim(-0.02, 1.05)
    ax.legend(loc="upper center", fontsize=8)
    ax.set_title("population profile")
    fig.tight_layout()
    return fig


def _report_panel(ax, reports):
    names = [r["name"] for r in reports]
    est = np.array([r["estimate"] for r in reports], dtype=float)
    tgt = np.array([r["target"] for r in reports], dtype=float)
    se = np.array([r["se"] for r in reports], dtype=float)
    y = np.arange(len(reports))
    colors = ["tab:green" if r["verdict"] == "pass"
              else ("tab:orange" if r["verdict"] == "inconclusive"
                    else "tab:red") for r in reports]
    ax.errorbar(est, y, xerr=3 * se, fmt="o", ms=4, color="k", ecolor="gray",
                elinewidth=3, zorder=3)
    ax.scatter(tgt, y, marker="|", s=200, c=colors, zorder=2)
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("estimate (dot, 3se bar) vs target (tick)")


def reports_figure(reports_json, title="verification summary"):
    obj = read_json(reports_json)
    reports = obj["reports"]
    if not reports:
        raise SchemaError(f"{reports_json}: no reports")
    fig, ax = plt.subplots(figsize=(8.0, max(3.0, 0.28 * len(reports))),
                           dpi=120)
    _report_panel(ax, reports)
    ax.set_title(title)
    fig.tight_layout()
    return fig


def yaglom_figure(raw_csv=None, reports_json=None):
    """Empirical CDF of the rescaled conditional population vs Exp(1)."""
    fig, ax = plt.subplots(**FIG_KW)
    if raw_csv is not None:
        cols = read_csv(raw_csv)
        z = np.sort(cols["z_rescaled"])
        emp = np.arange(1, z.size + 1) / z.size
        ax.step(z, emp, where="post", label=f"empirical ({z.size} survivors)")
    else:
        ax.text(0.5, 0.55, "raw sample file missing:\nsummary-only figure",
                ha="center", va="center", transform=ax.transAxes,
                color="tab:red")
    grid = np.linspace(0, 6, 400)
    ax.plot(grid, 1.0 - np.exp(-grid), "k--", label="unit-mean exponential")
    if reports_json is not None:
        obj = read_json(reports_json)
        lines = [f"{r['name']}: {r['estimate']:.3f} ({r['verdict']})"
                 for r in obj["reports"] if r["name"].startswith("yaglom")]
        if lines:
            ax.text(0.98, 0.05, "\n".join(lines), ha="right", va="bottom",
                    fontsize=7, transform=ax.transAxes)
    ax.set_xlabel("population / (variance * t / 2)")
    ax.set_ylabel("CDF")
    ax.set_xlim(0, 6)
    ax.legend(loc="center right", fontsize=8)
    ax.set_title("conditional population law")
    fig.tight_layout()
    return fig


def survival_figure(reports_json):
    """Extinction-bound estimates against the 2/t reference curve."""
    obj = read_json(reports_json)
    pts = [(float(r["name"].split("_t")[-1]), r["estimate"], r["se"])
           for r in obj["reports"] if r["name"].startswith("extinction_bound")]
    fig, ax = plt.subplots(**FIG_KW)
    if pts:
        ts, est, se = (np.array(v) for v in zip(*sorted(pts)))
        ax.errorbar(ts, est, yerr=3 * se, fmt="o", label="survival from the "
                    "stable configuration")
        grid = np.linspace(min(ts) * 0.8, max(ts) * 1.2, 200)
        ax.plot(grid, 2.0 / grid, "k--", label="2 / t bound")
        ax.set_xscale("log")
        ax.set_yscale("log")
    ratios = [(float(r["name"].split("_t")[-1]), r["estimate"], r["se"],
               r["target"])
              for r in obj["reports"] if r["name"].startswith("kolmogorov")]
    if ratios:
        ts, est, se, tgt = (np.array(v) for v in zip(*sorted(ratios)))
        ax2 = ax.twinx()
        ax2.errorbar(ts, est, yerr=3 * se, fmt="s", color="tab:green",
                     label="t P / h(x)")
        ax2.axhline(tgt[0], color="tab:green", ls=":")
        ax2.set_ylabel("survival ratio vs 2/variance", color="tab:green")
    ax.set_xlabel("t")
    ax.set_ylabel("survival probability")
    ax.legend(loc="lower left", fontsize=8)
    ax.set_title("survival asymptotics")
    fig.tight_layout()
    return fig


def laplace_figure(raw_csv, reports_json=None):
    """Empirical Laplace transform of the rescaled mass vs the target."""
    cols = read_csv(raw_csv)
    y = cols["ybar"]
    y0 = cols["ybar0"]
    lams = np.linspace(0.01, 3.0, 120)
    emp = np.array([np.mean(np.exp(-l * y)) for l in lams])
    fig, ax = plt.subplots(**FIG_KW)
    ax.plot(lams, emp, label="empirical transform")
    H = None
    if reports_json is not None:
        obj = read_json(reports_json)
        for r in obj["reports"]:
            if "H" in r.get("extra", {}):
                H = r["extra"]["H"]
                break
    if H is not None:
        tgt = np.array([np.mean(np.exp(-y0 * l / (1 + H * l))) for l in lams])
        ax.plot(lams, tgt, "k--", label="branching-diffusion target")
    ax.set_xlabel("lambda")
    ax.set_ylabel("E exp(-lambda Ybar)")
    ax.legend(fontsize=8)
    ax.set_title("demographic-fluctuation transform")
    fig.tight_layout()
    return fig


def genealogy_figure(raw_csv, t: float | None = None):
    """Pair-depth empirical CDF with the mixture-law overlay."""
    cols = read_csv(raw_csv)
    d = np.sort(cols["depth_first_pair"])
    emp = np.arange(1, d.size + 1) / d.size
    if t is None:
        t = float(d[-1]) * 1.0000001
    fig, ax = plt.subplots(**FIG_KW)
    ax.step(d / t, emp, where="post", label=f"empirical ({d.size} pairs)")
    u = np.linspace(1e-4, 1 - 1e-9, 400)
    with np.errstate(divide="ignore", invalid="ignore"):
        mix = 2 * u * (u - 1 - np.log(u)) / (1 - u) ** 2
    ax.plot(u, mix, "k--", label="mixture law")
    ax.set_xlabel("pair depth / horizon")
    ax.set_ylabel("CDF")
    ax.legend(fontsize=8)
    ax.set_title("sampled-pair coalescence depth")
    fig.tight_layout()
    return fig
