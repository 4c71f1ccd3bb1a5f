"""Command-line experiment runner.

Subcommands:

* ``bench``     -- filter benchmark; writes errors.csv, mse.csv,
  summary.json and curves.svg to the output directory;
* ``propagate`` -- Monte Carlo vs analytic covariance propagation; writes
  propagation.csv, summary.json and propagation.svg;
* ``systems``   -- list the built-in systems with their default configs.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .bench import ExperimentConfig, default_config, run_filter_benchmark, run_propagation_experiment
from .errors import ConfigError, HybridkalError
from .systems import SYSTEM_NAMES


def _add_common(parser: argparse.ArgumentParser) -> None:
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="experiment config (JSON)")
    src.add_argument("--system", choices=SYSTEM_NAMES,
                     help="use the built-in default config for this system")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the config trial count")
    parser.add_argument("--samples", type=int, help="override the config sample count")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip rendering SVG figures")


def _load_config(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        config = ExperimentConfig.from_json(text)
    else:
        config = default_config(args.system)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["n_trials"] = args.trials
    if args.samples is not None:
        overrides["n_samples"] = args.samples
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_bench(args) -> int:
    from .reports import write_reports
    config = _load_config(args)
    summary, reports = run_filter_benchmark(config, jobs=args.jobs)
    paths = write_reports(reports, args.out, summary=summary,
                          figures=not args.no_figures)
    for p in paths:
        print(p)
    if summary.median_mse_improvement_pct is not None:
        print(f"median MSE improvement: {summary.median_mse_improvement_pct:.3g}% "
              f"(sign test p = {summary.sign_test_p:.3g})")
        print(f"peak average-error improvement: "
              f"{summary.peak_avg_error_improvement_pct:.3g}% at t = {summary.peak_time:g} s")
    return 0


def _cmd_propagate(args) -> int:
    from .reports import write_propagation_report
    config = _load_config(args)
    report = run_propagation_experiment(config)
    paths = write_propagation_report(report, args.out, figures=not args.no_figures)
    for p in paths:
        print(p)
    for c in report.cases:
        ks = "-" if c.kl_saltation_only is None else f"{c.kl_saltation_only:.4g}"
        ku = "-" if c.kl_uncertainty_aware is None else f"{c.kl_uncertainty_aware:.4g}"
        print(f"{c.case:>12}: KL saltation-only {ks:>10}   uncertainty-aware {ku:>10}")
    return 0


def _cmd_systems(args) -> int:
    for name in SYSTEM_NAMES:
        print(f"== {name}")
        print(default_config(name).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridkal",
        description="Benchmarks for Kalman filtering through uncertain contact events.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run a filter benchmark")
    _add_common(bench)
    bench.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel trial workers (results are identical for any value)")
    bench.set_defaults(func=_cmd_bench)

    prop = sub.add_parser("propagate", help="run the covariance propagation study")
    _add_common(prop)
    prop.set_defaults(func=_cmd_propagate)

    systems = sub.add_parser("systems", help="list built-in systems and default configs")
    systems.set_defaults(func=_cmd_systems)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except HybridkalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
