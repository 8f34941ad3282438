"""Static plots drawn from the CSVs of an acceptance or scenario run.

Plots are optional: a missing CSV is reported with a warning and skipped.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np


def _rows(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _variance_fit(rows, ax):
    for H in sorted({r["H"] for r in rows}):
        sel = [r for r in rows if r["H"] == H]
        t = np.array([float(r["t"]) for r in sel])
        ax.loglog(t, [float(r["var_volterra"]) for r in sel], "o", ms=3, label=f"Volterra H={H}")
        ax.loglog(t, t ** (2 * float(H)), "-", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("Var B_t")
    ax.legend(fontsize=7)


def _entropy_bars(rows, ax):
    labels = [f"{r['scenario']}\n{r['shift']}" for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [float(r["entropy"]) for r in rows], 0.4, label="k-NN entropy")
    ax.bar(x + 0.2, [float(r["bound"]) for r in rows], 0.4, label="bound")
    ax.set_yscale("log")
    ax.set_xticks(x, labels, fontsize=5, rotation=60)
    ax.legend(fontsize=7)


def _bismut_scatter(rows, ax):
    est = np.array([float(r["estimate"]) for r in rows])
    fd = np.array([float(r["fd_value"]) for r in rows])
    se = np.array([float(r["std_error"]) for r in rows])
    ax.errorbar(fd, est, yerr=3 * se, fmt="o")
    lim = [min(fd.min(), est.min()) - 0.1, max(fd.max(), est.max()) + 0.1]
    ax.plot(lim, lim, "k--", lw=0.8)
    ax.set_xlabel("finite difference")
    ax.set_ylabel("Bismut estimate")


def _bound_vs_t0(rows, ax):
    for sc in sorted({r["scenario"] for r in rows}):
        sel = [r for r in rows if r["scenario"] == sc]
        ax.loglog([float(r["t0"]) for r in sel], [float(r["bound"]) for r in sel], "o-", label=sc)
    ax.set_xlabel("t0")
    ax.set_ylabel("bound")
    ax.legend(fontsize=7)


PLOTS = {
    "fbm_variance.csv": ("variance_fit.png", _variance_fit),
    "entropy_cost.csv": ("entropy_vs_bound.png", _entropy_bars),
    "bismut_fd.csv": ("bismut_vs_fd.png", _bismut_scatter),
    "blowup.csv": ("bound_vs_t0.png", _bound_vs_t0),
}


def emit_plots(csv_dir) -> list[Path]:
    """Write one PNG per known CSV found in ``csv_dir``; returns the files."""
    csv_dir = Path(csv_dir)
    out = []
    plt = None
    for name, (png, draw) in PLOTS.items():
        path = csv_dir / name
        if not path.exists():
            warnings.warn(f"{name} not found in {csv_dir}; plot skipped", stacklevel=2)
            continue
        rows = _rows(path)
        if not rows:
            continue
        plt = plt or _figure()
        fig, ax = plt.subplots(figsize=(5, 3.5))
        draw(rows, ax)
        fig.tight_layout()
        fig.savefig(csv_dir / png, dpi=120)
        plt.close(fig)
        out.append(csv_dir / png)
    return out
