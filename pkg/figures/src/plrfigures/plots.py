"""Figure builders for the experiment output.

Four kinds:

* histogram        distribution of per-rep estimates for one method, with a
                   vertical line at the true effect and annotated mean/sd
* sparsity_panel   bias / sd / mse / nuisance l2 errors against sparsity,
                   min-median-max bands across problem instances per method
* mse_grid         mse against sparsity, one panel per (n, p, sigma_eps) cell
* nuisance_error   first-stage l2 coefficient errors against sparsity

Determinism: a committed style sheet, the Agg backend, and stripped file
metadata make every figure a pure function of the input CSV (identical input
bytes give identical image bytes).  Beyond axis arithmetic nothing is
recomputed: panel lines plot cell-table values verbatim; the histogram bins
the raw samples it is given.
"""

from __future__ import annotations

import warnings
from importlib import resources
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .io import SchemaError, load_cells, load_samples

STYLE_PATH = str(resources.files("plrfigures").joinpath("style.mplstyle"))

#: metadata stripped per format so repeated renders are byte-identical
_NO_METADATA = {
    "png": {"Software": None},
    "svg": {"Date": None, "Creator": None},
}


def _save(fig, out: str) -> str:
    fmt = Path(out).suffix.lstrip(".").lower() or "png"
    if fmt not in _NO_METADATA:
        raise ValueError(f"unsupported image format {fmt!r}; use png or svg")
    fig.savefig(out, format=fmt, metadata=_NO_METADATA[fmt])
    plt.close(fig)
    return out


def _band(ax, grouped: pd.DataFrame, column: str, label: str):
    """min/median/max band of `column` against s; median is the solid line."""
    stats = grouped[column].agg(["min", "median", "max"]).reset_index().sort_values("s")
    line, = ax.plot(stats["s"], stats["median"], marker="o", label=label)
    ax.fill_between(stats["s"], stats["min"], stats["max"], alpha=0.18,
                    color=line.get_color())
    return stats


def _warn_on_gaps(df: pd.DataFrame) -> None:
    all_s = sorted(df["s"].unique())
    for method, sub in df.groupby("method"):
        missing = sorted(set(all_s) - set(sub["s"].unique()))
        if missing:
            warnings.warn(
                f"method {method!r} has no cells at s={missing}; plotting with gaps",
                stacklevel=3,
            )


def plot_histogram(samples_csv: str, method: str, out: str):
    """Histogram of per-rep estimates for one method."""
    df = load_samples(samples_csv)
    sub = df[df["method"] == method]
    if sub.empty:
        have = ", ".join(sorted(df["method"].unique())) or "none"
        raise SchemaError(
            f"{samples_csv}: no samples for method {method!r} (available: {have})"
        )
    theta0 = float(sub["theta0"].iloc[0])
    values = sub["theta_hat"].to_numpy()
    with plt.style.context(STYLE_PATH):
        fig, ax = plt.subplots()
        ax.hist(values, bins=min(40, max(1, len(np.unique(values)))),
                color="#1f77b4", alpha=0.85)
        ax.axvline(theta0, color="black", linestyle="--", linewidth=1.2,
                   label=f"true effect = {theta0:g}")
        mean, sd = float(values.mean()), float(values.std(ddof=0))
        ax.set_title(f"{method}: mean {mean:.3f}, sd {sd:.3f} ({len(values)} estimates)")
        ax.set_xlabel("estimate")
        ax.set_ylabel("count")
        ax.legend()
        return _save(fig, out), fig


def plot_sparsity_panels(cells_csv: str, out: str):
    """Bias / sd / mse / nuisance-error panels against sparsity."""
    df = load_cells(cells_csv)
    _warn_on_gaps(df)
    theta0 = float(df["theta0"].iloc[0])
    with plt.style.context(STYLE_PATH):
        fig, axes = plt.subplots(1, 4, figsize=(16, 3.8))
        for method, sub in df.groupby("method"):
            grouped = sub.groupby("s")
            _band(axes[0], grouped, "bias", method)
            _band(axes[1], grouped, "sd", method)
            _band(axes[2], grouped, "mse", method)
        for method, sub in df.groupby("method"):
            grouped = sub.groupby("s")
            _band(axes[3], grouped, "nuisance_l2_gamma", f"{method} (treatment)")
            _band(axes[3], grouped, "nuisance_l2_q", f"{method} (outcome)")
        axes[0].axhline(0.0, color="black", linewidth=0.8)
        titles = ["bias", "standard deviation", "mean squared error",
                  "first-stage l2 coefficient error"]
        for ax, title in zip(axes, titles):
            ax.set_xlabel("non-zero coefficients s")
            ax.set_title(title)
        axes[0].set_ylabel(f"relative to true effect {theta0:g}")
        axes[2].set_yscale("log")
        axes[0].legend()
        axes[3].legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, out), fig


def plot_mse_grid(cells_csv: str, out: str):
    """MSE against sparsity, one panel per (n, p, sigma_eps) combination."""
    df = load_cells(cells_csv)
    _warn_on_gaps(df)
    combos = sorted(df.groupby(["n", "p", "sigma_eps"]).groups)
    with plt.style.context(STYLE_PATH):
        ncols = min(3, len(combos))
        nrows = (len(combos) + ncols - 1) // ncols
        fig, axes = plt.subplots(
            nrows, ncols, figsize=(4.6 * ncols, 3.6 * nrows), squeeze=False
        )
        for ax, (n, p, sig) in zip(axes.flat, combos):
            cell = df[(df["n"] == n) & (df["p"] == p) & (df["sigma_eps"] == sig)]
            for method, sub in cell.groupby("method"):
                _band(ax, sub.groupby("s"), "mse", method)
            ax.set_yscale("log")
            ax.set_xlabel("s")
            ax.set_ylabel("mse")
            ax.set_title(f"n={n}, p={p}, sigma_eps={sig:g}")
            ax.legend(fontsize=7)
        for ax in list(axes.flat)[len(combos):]:
            ax.set_visible(False)
        fig.tight_layout()
        return _save(fig, out), fig


def plot_nuisance_error(cells_csv: str, out: str):
    """First-stage l2 coefficient errors against sparsity per method."""
    df = load_cells(cells_csv)
    _warn_on_gaps(df)
    with plt.style.context(STYLE_PATH):
        fig, axes = plt.subplots(1, 2, figsize=(9.6, 3.8))
        for method, sub in df.groupby("method"):
            grouped = sub.groupby("s")
            _band(axes[0], grouped, "nuisance_l2_gamma", method)
            _band(axes[1], grouped, "nuisance_l2_q", method)
        axes[0].set_title("treatment model error |gamma_hat - gamma0|")
        axes[1].set_title("outcome model error |q_hat - q0|")
        for ax in axes:
            ax.set_xlabel("non-zero coefficients s")
            ax.set_ylabel("l2 error")
            ax.legend(fontsize=8)
        fig.tight_layout()
        return _save(fig, out), fig


FIGURE_KINDS = {
    "histogram": plot_histogram,
    "sparsity_panel": plot_sparsity_panels,
    "mse_grid": plot_mse_grid,
    "nuisance_error": plot_nuisance_error,
}
