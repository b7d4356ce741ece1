"""Command-line entry point.

Subcommands:
  run <config>                      simulate one protocol, write the series CSV
  fit <csv> <model> [options]       fit a written series, write a report JSON
  sweep <config> --param K --values one run per value plus a fit summary table
  presets list | write <name>       inspect or materialize built-in configs

Exit codes: 0 ok, 2 configuration error, 3 runtime error, 4 fit did not
converge. Errors print one machine-parsable line ``ERROR <kind>: <message>``
on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (FitInputError, fit_double_exponential, fit_exponential,
                       fit_multi_gaussian, fit_temperature, linear_fit)
from .config import (ConfigError, RunConfig, config_digest, override_config,
                     parse_config, serialize_config)
from .ensemble import SamplerConvergenceError, sample_thermal_cloud
from .experiment import run_decay, run_microwave_scan, run_optical_scan
from .potentials import make_total_potential
from .presets import preset_names, preset_text
from .series import CountTimeSeries, read_series_csv, write_series_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_NO_CONVERGENCE = 4


class FitNotConverged(RuntimeError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chipspec",
        description="Simulate and analyze chip-trap photoionization spectroscopy runs.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured master seed")
    parser.add_argument("--out-dir", type=Path, default=Path("."),
                        help="directory for output files")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured protocol")
    p_run.add_argument("config", type=Path)

    p_fit = sub.add_parser("fit", help="fit a series CSV with a named model")
    p_fit.add_argument("csv", type=Path)
    p_fit.add_argument("model",
                       choices=("exp", "double-exp", "multi-gauss", "temperature", "linear"))
    p_fit.add_argument("--peaks", type=int, default=4,
                       help="peak count for multi-gauss")
    p_fit.add_argument("--trap-bottom", type=float, default=None,
                       help="trap-bottom frequency on the spectrum axis (temperature fits)")
    p_fit.add_argument("--out", type=Path, default=None, help="report path")

    p_sweep = sub.add_parser("sweep", help="repeat a run over a list of values")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--param", required=True, help="config key to sweep")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated raw values (units allowed, e.g. '0.5 W')")

    p_presets = sub.add_parser("presets", help="list or write built-in configurations")
    p_presets.add_argument("action", choices=("list", "write"))
    p_presets.add_argument("name", nargs="?", default=None)
    return parser


def _prepare_cloud(cfg: RunConfig):
    potential = make_total_potential(cfg.trap)
    return sample_thermal_cloud(cfg.cloud.n_sim, cfg.cloud.n_phys,
                                cfg.cloud.temperature, potential, cfg.seed)


def _execute(cfg: RunConfig) -> CountTimeSeries:
    cloud = _prepare_cloud(cfg)
    apparatus = cfg.apparatus()
    name = cfg.protocol_name
    if name == "decay":
        return run_decay(cloud, cfg.protocol, apparatus, cfg.seed)
    if name == "optical-scan":
        return run_optical_scan(cloud, cfg.protocol, apparatus, cfg.seed)
    return run_microwave_scan(cloud, cfg.protocol, cfg.trap, apparatus, cfg.seed)


def _series_header(cfg: RunConfig) -> dict:
    return {"tool_version": __version__, "seed": cfg.seed,
            "config_sha256": config_digest(cfg)}


def _auto_fit(series: CountTimeSeries, cfg: RunConfig):
    model = cfg.auto_fit
    if model == "exp":
        return fit_exponential(series)
    if model == "double-exp":
        return fit_double_exponential(series)
    if model == "multi-gauss":
        return fit_multi_gaussian(series, len(cfg.spectrum.line_offsets))
    if model == "temperature":
        bottom = cfg.trap.bottom_frequency - cfg.protocol.axis_origin
        return fit_temperature(series, bottom)
    raise FitInputError(f"unknown auto-fit model {model!r}")


def _summary_line(report) -> str:
    body = ", ".join(f"{k}={v:.6g}+-{report.uncertainties[k]:.2g}"
                     for k, v in report.parameters.items())
    state = "converged" if report.converged else "NOT CONVERGED"
    return f"{report.model}: {body} [{state}, {report.iterations} iterations]"


def _run_config(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    series = _execute(cfg)
    csv_path = out_dir / f"{cfg.out_prefix}.csv"
    write_series_csv(series, csv_path, extra_header=_series_header(cfg))
    print(f"wrote {csv_path} ({series.total_counts} counts in {series.counts.size} bins)")
    if cfg.auto_fit != "none":
        report = _auto_fit(series, cfg)
        fit_path = out_dir / f"{cfg.out_prefix}_fit.json"
        fit_path.write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"wrote {fit_path}")
        print(_summary_line(report))
        if not report.converged:
            raise FitNotConverged(f"auto-fit {cfg.auto_fit} did not converge")
    return EXIT_OK


def _cmd_run(args) -> int:
    text = args.config.read_text(encoding="utf-8")
    overrides = {"run.seed": str(args.seed)} if args.seed is not None else None
    cfg = parse_config(text, overrides)
    return _run_config(cfg, args.out_dir)


def _cmd_fit(args) -> int:
    if not args.csv.exists():
        raise FileNotFoundError(f"no such series file: {args.csv}")
    series = read_series_csv(args.csv)
    if args.model == "exp":
        report = fit_exponential(series)
    elif args.model == "double-exp":
        report = fit_double_exponential(series)
    elif args.model == "multi-gauss":
        report = fit_multi_gaussian(series, args.peaks)
    elif args.model == "temperature":
        bottom = args.trap_bottom
        if bottom is None:
            meta = series.metadata
            if "bottom_frequency" in meta and "axis_origin" in meta:
                bottom = float(meta["bottom_frequency"]) - float(meta["axis_origin"])
            else:
                raise FitInputError("temperature fit needs --trap-bottom or series metadata")
        report = fit_temperature(series, bottom)
    else:  # linear
        slope, intercept, (s_sl, s_ic) = linear_fit(series.bin_centers,
                                                    series.counts.astype(float))
        print(f"linear: slope={slope:.6g}+-{s_sl:.2g}, intercept={intercept:.6g}+-{s_ic:.2g}")
        out = args.out or args.csv.with_suffix(".linear.json")
        out.write_text(
            '{"model": "linear", "slope": %r, "slope_sigma": %r, '
            '"intercept": %r, "intercept_sigma": %r}\n'
            % (slope, s_sl, intercept, s_ic), encoding="utf-8")
        return EXIT_OK
    out = args.out or args.csv.with_suffix(".fit.json")
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(_summary_line(report))
    if not report.converged:
        raise FitNotConverged(f"{args.model} fit did not converge")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    text = args.config.read_text(encoding="utf-8")
    overrides = {"run.seed": str(args.seed)} if args.seed is not None else None
    base = parse_config(text, overrides)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("sweep needs at least one value")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    n_peaks = len(base.spectrum.line_offsets)
    rows = []
    for index, raw in enumerate(raw_values):
        cfg = override_config(base, args.param, raw)
        cfg = override_config(cfg, "run.out_prefix", f"{base.out_prefix}_{index:02d}")
        series = _execute(cfg)
        csv_path = args.out_dir / f"{cfg.out_prefix}.csv"
        write_series_csv(series, csv_path, extra_header=_series_header(cfg))
        report = fit_multi_gaussian(series, n_peaks)
        value = _sweep_value(cfg, args.param)
        row = [value]
        row += [report.parameters[f"center_{i + 1}"] for i in range(n_peaks)]
        row += [report.parameters[f"fwhm_{i + 1}"] for i in range(n_peaks)]
        rows.append(row)
        print(f"{args.param}={raw}: wrote {csv_path}")

    summary = args.out_dir / f"{base.out_prefix}_summary.csv"
    with open(summary, "w", encoding="utf-8") as fh:
        cols = ["value"]
        cols += [f"center{i + 1}_hz" for i in range(n_peaks)]
        cols += [f"fwhm{i + 1}_hz" for i in range(n_peaks)]
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {summary}")
    return EXIT_OK


def _sweep_value(cfg: RunConfig, key: str) -> float:
    """Resolve the numeric value a sweep key took in a parsed config."""
    from .config import serialize_config as _ser
    for line in _ser(cfg).splitlines():
        if line.startswith(key + " = "):
            return float(line.split("=", 1)[1])
    raise ConfigError(f"sweep key {key!r} not present in the resolved config")


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    if args.name is None:
        raise ConfigError("presets write requires a preset name")
    text = preset_text(args.name)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / f"{args.name}.cfg"
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_presets(args)
    except FitNotConverged as exc:
        print(f"ERROR fit: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ConfigError, KeyError) as exc:
        print(f"ERROR config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitInputError, FileNotFoundError, OSError, ValueError,
            SamplerConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"ERROR runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
