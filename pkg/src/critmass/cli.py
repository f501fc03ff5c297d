"""Command-line interface: ``critmass fit|test|compare|rank|simulate|report``.

Exit codes: 0 success, 1 analysis error, 2 I/O, usage or load error.
Failures print ``{"error": {"stage", "type", "message"}}`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import SCHEMES, serialize_dataset
from .errors import ValidationError
from .micro import MicroParams, generate_dataset
from .nls import compare_ansaetze
from .ranking import rank_groups, residuals_vs_mean, residuals_vs_model
from .report import (
    FIGURES,
    AnalysisReport,
    RunConfig,
    StageError,
    comparison_csv,
    confidence_band,
    critical_masses,
    classify,
    dumps,
    emit_plot_data,
    fit_block,
    fit_grid,
    load_input,
    run_fit,
    run_full_analysis,
    run_tests,
    stage,
    tests_dict,
    to_csv,
)
from .segmented import DEFAULT_RESAMPLES, MODES


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--input", help="data file (default: bundled Statistics & OR table)")
    p.add_argument("--exclude", action="append", default=[], metavar="NAME|#INDEX",
                   help="drop a record from fitting (repeatable)")
    p.add_argument("--weights", choices=sorted(SCHEMES), default="2009")
    p.add_argument("--out", help="output file (default: stdout)")
    return p


def _boot():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--resamples", type=int, default=DEFAULT_RESAMPLES)
    p.add_argument("--seed", type=int, help="bootstrap seed (required when resampling)")
    return p


def build_parser() -> Parser:
    common, boot = _common(), _boot()
    parser = Parser(prog="critmass", description="Critical-mass analysis of research-group quality.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("fit", parents=[common, boot], help="two-segment fit with bootstrap errors")
    p.add_argument("--mode", choices=MODES, default="continuous")
    p.add_argument("--band", type=float, default=0.95, help="confidence level of the band")
    p.add_argument("--plot-data", help="CSV of the fitted line and band")

    p = sub.add_parser("test", parents=[common, boot], help="hypothesis tests")
    p.add_argument("--mode", choices=MODES, default="continuous")
    p.add_argument("--which", choices=("all", "nocorr", "slopes", "rightflat", "ks"), default="all")

    p = sub.add_parser("compare", parents=[common], help="fit every ansatz; .json or .csv output")
    p.add_argument("--mode", choices=MODES, default="continuous")

    p = sub.add_parser("rank", parents=[common], help="rank groups by deviation")
    p.add_argument("--mode", choices=("mean", "model"), default="mean")
    p.add_argument("--fit-mode", choices=MODES, default="continuous")
    p.add_argument("--plot-data", help="CSV with index, name, deviation, excluded_flag")

    p = sub.add_parser("simulate", help="synthetic data from the microscopic model")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--nc", type=float, default=18.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--sizes", required=True, help="file of sizes or start:stop[:step]")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")

    p = sub.add_parser("report", parents=[common, boot], help="full analysis as one JSON document")
    p.add_argument("--mode", choices=MODES, default="continuous")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--plot-dir", help="directory for per-figure CSV files")
    return parser


def _config(args, resamples=None, level=0.95, mode=None) -> RunConfig:
    with stage("config"):
        return RunConfig(
            input=args.input,
            weights=args.weights,
            exclusions=tuple(args.exclude),
            mode=mode or args.mode,
            resamples=args.resamples if resamples is None else resamples,
            seed=getattr(args, "seed", None),
            level=level,
        )


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    with stage("write"):
        Path(path).write_text(text, encoding="utf-8", newline="")


def parse_sizes(arg: str) -> np.ndarray:
    """Sizes from ``start:stop[:step]`` (stop inclusive) or a file of numbers."""
    if ":" in arg and not Path(arg).exists():
        try:
            parts = [float(t) for t in arg.split(":")]
        except ValueError:
            raise ValidationError(f"bad size range {arg!r}") from None
        if len(parts) not in (2, 3):
            raise ValidationError(f"size range must be start:stop[:step], got {arg!r}")
        start, stop = parts[:2]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0 or stop < start:
            raise ValidationError(f"empty size range {arg!r}")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(count)
    text = Path(arg).read_text(encoding="utf-8")
    try:
        return np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError:
        raise ValidationError(f"size file {arg!r} must contain numbers only") from None


def cmd_fit(args):
    config = _config(args, level=args.band)
    ds = load_input(config)
    fit = run_fit(config, ds)
    with stage("critical_masses"):
        masses = critical_masses(fit)
        _, counts = classify(ds, masses)
    if args.plot_data:
        with stage("band"):
            band = confidence_band(fit, ds, fit_grid(ds), config.level)
        rows = [list(t) for t in zip(band.grid, band.center, band.lower, band.upper)]
        _write(args.plot_data, to_csv(["N_grid", "prediction", "band_lo", "band_hi"], rows))
    _write(args.out, dumps({"config": config.to_dict(), **fit_block(fit, masses, counts, ds)}))


def cmd_test(args):
    needs_boot = args.which in ("all", "slopes")
    config = _config(args, resamples=args.resamples if needs_boot else 0)
    ds = load_input(config)
    fit = run_fit(config, ds)
    tests = run_tests(ds, fit, args.which)
    _write(args.out, dumps({"config": config.to_dict(), "tests": tests_dict(tests)}))


def cmd_compare(args):
    config = _config(args, resamples=0)
    ds = load_input(config)
    with stage("compare"):
        rows = compare_ansaetze(ds, config.mode)
    if args.out and args.out.lower().endswith(".csv"):
        _write(args.out, comparison_csv(rows))
    else:
        _write(args.out, dumps({"config": config.to_dict(), "comparison": [r.to_dict() for r in rows]}))


def cmd_rank(args):
    config = _config(args, resamples=0, mode=args.fit_mode)
    ds = load_input(config)
    with stage("rank"):
        if args.mode == "mean":
            rep = residuals_vs_mean(ds, include_excluded=True)
        else:
            rep = residuals_vs_model(ds, run_fit(config, ds))
    rows = [[k, name, dev] for name, dev, k in rank_groups(rep)]
    _write(args.out, to_csv(["rank", "name", "deviation"], rows))
    if args.plot_data:
        pd = [[i, rep.names[i], d, int(ds.is_excluded(i))] for i, d in rep.deviations]
        _write(args.plot_data, to_csv(["index", "name", "deviation", "excluded_flag"], pd))


def cmd_simulate(args):
    with stage("config"):
        params = MicroParams(args.a, args.b, args.c, args.nc, args.noise, args.seed)
    with stage("load"):
        sizes = parse_sizes(args.sizes)
    with stage("simulate"):
        ds = generate_dataset(sizes, params)
    _write(args.out, serialize_dataset(ds))


def cmd_report(args):
    config = _config(args, level=args.level)
    report: AnalysisReport = run_full_analysis(config)
    if args.plot_dir:
        out = Path(args.plot_dir)
        with stage("write"):
            out.mkdir(parents=True, exist_ok=True)
        for fig in FIGURES:
            with stage("plot"):
                text = emit_plot_data(report, fig)
            _write(out / f"{fig}.csv", text)
    _write(args.out, dumps(report.to_dict()))


COMMANDS = {
    "fit": cmd_fit,
    "test": cmd_test,
    "compare": cmd_compare,
    "rank": cmd_rank,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _fail(stage_name, exc, code):
    block = {"error": {"stage": stage_name, "type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(block) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        if exc.stage == "config":
            return _fail("usage", exc.cause, 2)
        return _fail(exc.stage, exc.cause, exc.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
