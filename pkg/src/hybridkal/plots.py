"""Matplotlib figure rendering for the report path.

SVG output is made byte-reproducible by pinning the hash salt and dropping
the creation date from the metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Ellipse

from .bench import BenchmarkSummary, PropagationReport

matplotlib.rcParams["svg.hashsalt"] = "hybridkal"

ESTIMATOR_STYLE = {
    "EKF": dict(color="0.45", linestyle=":"),
    "SKF": dict(color="tab:red", linestyle="--"),
    "uaSKF": dict(color="tab:blue", linestyle="-"),
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def render_error_curves(summary: BenchmarkSummary, path) -> Path:
    """One panel per state dimension: mean |error| over trials vs time."""
    n_dims = next(iter(summary.mean_abs_error.values())).shape[1]
    n_cols = 2 if n_dims > 1 else 1
    n_rows = (n_dims + n_cols - 1) // n_cols
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(4.0 * n_cols, 2.4 * n_rows),
        sharex=True, squeeze=False,
    )
    for j in range(n_dims):
        ax = axes[j // n_cols][j % n_cols]
        for tag in summary.estimators:
            ax.plot(summary.times, summary.mean_abs_error[tag][:, j],
                    label=tag, linewidth=1.2, **ESTIMATOR_STYLE.get(tag, {}))
        if summary.first_impact_t is not None:
            ax.axvspan(summary.first_impact_t, summary.last_impact_t,
                       color="0.85", zorder=0)
        ax.set_ylabel(f"|err| state {j}")
    for j in range(n_dims, n_rows * n_cols):
        axes[j // n_cols][j % n_cols].set_visible(False)
    for ax in axes[-1]:
        ax.set_xlabel("time [s]")
    axes[0][0].legend(loc="upper left", fontsize=8)
    fig.suptitle(f"{summary.system}: mean absolute error over {summary.n_trials} trials")
    fig.tight_layout()
    return _save(fig, path)


def _cov_ellipse(ax, mean, cov, n_std=3.0, **kwargs):
    w, V = np.linalg.eigh(np.asarray(cov)[:2, :2])
    w = np.maximum(w, 0.0)
    angle = float(np.degrees(np.arctan2(V[1, -1], V[0, -1])))
    ax.add_patch(Ellipse(
        xy=(mean[0], mean[1]),
        width=2 * n_std * np.sqrt(w[-1]), height=2 * n_std * np.sqrt(w[0]),
        angle=angle, fill=False, **kwargs,
    ))


def render_propagation(report: PropagationReport, path) -> Path:
    """Fig-1-style panels: final particles with empirical and predicted
    3-sigma position ellipses per uncertainty case."""
    fig, axes = plt.subplots(2, 2, figsize=(8.0, 6.4), sharex=True, sharey=True)
    for ax, case in zip(axes.ravel(), report.cases):
        if case.particles_2d is not None:
            ax.plot(case.particles_2d[:, 0], case.particles_2d[:, 1], ".",
                    color="gold", markersize=2, zorder=1)
        if case.empirical is not None:
            _cov_ellipse(ax, case.empirical.mean, case.empirical.cov,
                         color="black", linewidth=1.4, zorder=3)
        if case.predicted_saltation is not None:
            _cov_ellipse(ax, case.predicted_saltation.mean, case.predicted_saltation.cov,
                         color="tab:red", linestyle=":", linewidth=1.4, zorder=4)
        if case.predicted_uncertainty_aware is not None:
            _cov_ellipse(ax, case.predicted_uncertainty_aware.mean,
                         case.predicted_uncertainty_aware.cov,
                         color="tab:blue", linestyle="--", linewidth=1.4, zorder=5)
        ks = "-" if case.kl_saltation_only is None else f"{case.kl_saltation_only:.3g}"
        ku = "-" if case.kl_uncertainty_aware is None else f"{case.kl_uncertainty_aware:.3g}"
        ax.set_title(f"{case.case}  (KL salt {ks} / aware {ku})", fontsize=9)
        ax.set_aspect("equal", adjustable="datalim")
    for ax in axes[-1]:
        ax.set_xlabel("x [m]")
    for row in axes:
        row[0].set_ylabel("y [m]")
    fig.suptitle(
        f"{report.system}: sampled vs predicted covariance after the event "
        f"(N={report.n_samples})"
    )
    fig.tight_layout()
    return _save(fig, path)
