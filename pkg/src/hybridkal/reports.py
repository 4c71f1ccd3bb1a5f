"""Deterministic report files: delimited error tables, JSON summaries, figures.

Every float is serialized with 17 significant digits and every row order is
fixed (trial, estimator, time, state index ascending), so rerunning an
experiment with the same config and seed produces byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .bench import BenchmarkSummary, PropagationReport, TrialReport


def fmt(x: float) -> str:
    """17-significant-digit representation used in all report files."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} in report")
    return format(float(x), ".17g")


def dump_json(obj) -> str:
    """Small JSON emitter with sorted keys and 17-significant-digit floats."""
    return "".join(_emit(obj, 0))


def _emit(obj, depth: int):
    pad = "  " * depth
    pad_in = "  " * (depth + 1)
    if obj is None:
        yield "null"
    elif isinstance(obj, bool):
        yield "true" if obj else "false"
    elif isinstance(obj, (int, np.integer)):
        yield str(int(obj))
    elif isinstance(obj, (float, np.floating)):
        yield fmt(float(obj))
    elif isinstance(obj, str):
        yield '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    elif isinstance(obj, dict):
        if not obj:
            yield "{}"
            return
        yield "{\n"
        keys = sorted(obj)
        for i, k in enumerate(keys):
            yield pad_in + '"' + str(k) + '": '
            yield from _emit(obj[k], depth + 1)
            yield ",\n" if i + 1 < len(keys) else "\n"
        yield pad + "}"
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            yield "[]"
            return
        yield "[\n"
        for i, v in enumerate(items):
            yield pad_in
            yield from _emit(v, depth + 1)
            yield ",\n" if i + 1 < len(items) else "\n"
        yield pad + "]"
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as e:
        raise OSError(f"failed writing report file {path}: {e}") from e
    return path


def _summary_payload(summary: Optional[BenchmarkSummary]) -> dict:
    if summary is None:
        return {
            "system": None, "n_trials": None, "n_failed": None,
            "estimators": None, "median_mse_improvement_pct": None,
            "peak_avg_error_improvement_pct": None, "peak_time": None,
            "sign_test_p": None, "first_impact_t": None, "last_impact_t": None,
            "error_metric": None, "times": None, "mean_abs_error": None,
            "error_curve": None,
        }
    return {
        "system": summary.system,
        "n_trials": summary.n_trials,
        "n_failed": summary.n_failed,
        "estimators": list(summary.estimators),
        "median_mse_improvement_pct": summary.median_mse_improvement_pct,
        "peak_avg_error_improvement_pct": summary.peak_avg_error_improvement_pct,
        "peak_time": summary.peak_time,
        "sign_test_p": summary.sign_test_p,
        "first_impact_t": summary.first_impact_t,
        "last_impact_t": summary.last_impact_t,
        "error_metric": summary.error_metric,
        "times": summary.times,
        "mean_abs_error": {k: v for k, v in summary.mean_abs_error.items()},
        "error_curve": {k: v for k, v in summary.error_curve.items()},
    }


def write_reports(
    reports: Iterable[TrialReport],
    out_dir,
    times: Optional[np.ndarray] = None,
    summary: Optional[BenchmarkSummary] = None,
    figures: bool = True,
) -> list[Path]:
    """Write errors.csv, mse.csv, summary.json and (optionally) curves.svg.

    ``times`` defaults to the summary's time grid; it is only needed when
    reports are written without a summary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = sorted(reports, key=lambda r: (r.trial, r.estimator))
    if times is None and summary is not None:
        times = summary.times

    lines = ["trial,estimator,t,state_index,abs_error"]
    for r in reports:
        err = np.asarray(r.per_step_abs_error)
        if times is None or len(times) != err.shape[0]:
            raise ValueError("times is required and must match the error matrix rows")
        for i in range(err.shape[0]):
            t_s = fmt(times[i])
            for j in range(err.shape[1]):
                lines.append(f"{r.trial},{r.estimator},{t_s},{j},{fmt(err[i, j])}")
    paths = [_write(out / "errors.csv", "\n".join(lines) + "\n")]

    lines = ["trial,estimator,mse"]
    for r in reports:
        lines.append(f"{r.trial},{r.estimator},{fmt(r.mse)}")
    paths.append(_write(out / "mse.csv", "\n".join(lines) + "\n"))

    paths.append(_write(out / "summary.json", dump_json(_summary_payload(summary)) + "\n"))

    if figures and summary is not None:
        from .plots import render_error_curves
        paths.append(render_error_curves(summary, out / "curves.svg"))
    return paths


def write_propagation_report(
    report: PropagationReport,
    out_dir,
    figures: bool = True,
) -> list[Path]:
    """Write propagation.csv, summary.json and (optionally) propagation.svg."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["case,n_samples,n_excluded,kl_saltation_only,kl_uncertainty_aware"]
    for c in report.cases:
        ks = "" if c.kl_saltation_only is None else fmt(c.kl_saltation_only)
        ku = "" if c.kl_uncertainty_aware is None else fmt(c.kl_uncertainty_aware)
        lines.append(f"{c.case},{c.n_samples},{c.n_excluded},{ks},{ku}")
    paths = [_write(out / "propagation.csv", "\n".join(lines) + "\n")]

    payload = {
        "system": report.system,
        "n_samples": report.n_samples,
        "seed": report.seed,
        "sigma_g": report.sigma_g,
        "sigma_theta_diag": report.sigma_theta_diag,
        "t_event": report.t_event,
        "t_end": report.t_end,
        "cases": [
            {
                "case": c.case,
                "n_samples": c.n_samples,
                "n_excluded": c.n_excluded,
                "kl_saltation_only": c.kl_saltation_only,
                "kl_uncertainty_aware": c.kl_uncertainty_aware,
                "note": c.note,
                "empirical_mean": None if c.empirical is None else c.empirical.mean,
                "empirical_cov": None if c.empirical is None else c.empirical.cov,
                "predicted_saltation_cov":
                    None if c.predicted_saltation is None else c.predicted_saltation.cov,
                "predicted_uncertainty_aware_cov":
                    None if c.predicted_uncertainty_aware is None
                    else c.predicted_uncertainty_aware.cov,
            }
            for c in report.cases
        ],
    }
    paths.append(_write(out / "summary.json", dump_json(payload) + "\n"))

    if figures:
        from .plots import render_propagation
        paths.append(render_propagation(report, out / "propagation.svg"))
    return paths
