"""Command-line front end: estimate from CSV panels or run the simulation study.

Exit codes: 0 success, 2 invalid arguments, 3 malformed panel data
(unbalanced, duplicates), 4 numerical failure (SingularDesign, SingularSigma,
RankDeficient, NoConvergence).
"""

from __future__ import annotations

import argparse
import sys

from .correction import analytically_corrected, bias_components, split_panel_jackknife
from .errors import (
    EstimationError,
    InvalidQuantile,
    NoConvergence,
    PanelDataError,
    PanelTooShort,
    RankDeficient,
    SingularDesign,
    SingularSigma,
)
from .inference import covariance, inference_rows
from .panel import fixed_effects_fit, load_panel_csv
from .quantile import canay_estimate
from .simulate import ESTIMATORS, run_monte_carlo
from .sqr import EstimateResult, SqrConfig, sqr_estimate

_ESTIMATE_COLUMNS = (
    "tau", "estimator", "coefficient_index",
    "estimate", "std_error", "ci_lower", "ci_upper",
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _parse_float_list(text: str, name: str):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid {name} list: {text!r}") from None


def _parse_int_list(text: str, name: str):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid {name} list: {text!r}") from None


def _format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _rows_to_csv(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_value(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def _rows_to_markdown(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in rows:
        lines.append("| " + " | ".join(_format_value(row[c]) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def _write_output(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_estimate(args) -> int:
    taus = args.tau
    if any(not 0.0 < tau < 1.0 for tau in taus):
        print(f"error: every tau must lie in (0, 1), got {taus}", file=sys.stderr)
        return EXIT_USAGE
    if not 0.0 < args.level < 1.0:
        print(f"error: level must lie in (0, 1), got {args.level}", file=sys.stderr)
        return EXIT_USAGE
    if args.bandwidth <= 0:
        print(f"error: bandwidth must be positive, got {args.bandwidth}", file=sys.stderr)
        return EXIT_USAGE
    wanted = ESTIMATORS if args.estimator == "all" else (args.estimator,)

    try:
        panel = load_panel_csv(args.input)
    except PanelDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_DATA

    config = SqrConfig(bandwidth=args.bandwidth)
    rows = []
    try:
        first_step = fixed_effects_fit(panel)
        for tau in taus:
            beta_canay = canay_estimate(panel, tau, first_step)
            betas = {"canay": beta_canay}
            sqr_fit = None
            if any(e in wanted for e in ("sqr", "abc", "spj")):
                from dataclasses import replace

                sqr_fit = sqr_estimate(panel, tau, first_step,
                                       replace(config, init=beta_canay))
                betas["sqr"] = sqr_fit.beta
                if "abc" in wanted:
                    bias = bias_components(panel, tau, first_step, sqr_fit, config)
                    betas["abc"] = analytically_corrected(sqr_fit, bias, panel.n_periods)
                if "spj" in wanted:
                    betas["spj"] = split_panel_jackknife(
                        panel, tau, config, first_step=first_step, sqr_fit=sqr_fit
                    )
            center = sqr_fit if sqr_fit is not None else EstimateResult.from_beta(
                beta_canay, first_step
            )
            inference = covariance(panel, tau, first_step, center, config, args.level)
            for est in wanted:
                if est in betas:
                    rows.extend(
                        inference_rows(inference.with_estimates(betas[est]), est, tau)
                    )
    except (PanelTooShort, PanelDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidQuantile as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularDesign, SingularSigma, RankDeficient, NoConvergence) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    render = _rows_to_markdown if args.format == "markdown" else _rows_to_csv
    _write_output(render(_ESTIMATE_COLUMNS, rows), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.reps < 1:
        print(f"error: --reps must be >= 1, got {args.reps}", file=sys.stderr)
        return EXIT_USAGE
    if any(not 0.0 < tau < 1.0 for tau in args.tau):
        print(f"error: every tau must lie in (0, 1), got {args.tau}", file=sys.stderr)
        return EXIT_USAGE
    if any(n < 2 for n in args.n) or any(t < 2 for t in args.t):
        print("error: every N and T must be >= 2", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs is not None and args.jobs < 1:
        print(f"error: --jobs must be >= 1, got {args.jobs}", file=sys.stderr)
        return EXIT_USAGE
    estimators = tuple(tok.strip() for tok in args.estimators.split(",") if tok.strip())
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown or not estimators:
        print(f"error: unknown estimators {unknown}; choose from {ESTIMATORS}",
              file=sys.stderr)
        return EXIT_USAGE

    grid = [(args.model, n, t) for n in args.n for t in args.t]
    try:
        report = run_monte_carlo(
            grid,
            taus=args.tau,
            estimators=estimators,
            n_replications=args.reps,
            master_seed=args.seed,
            jobs=args.jobs,
            config=SqrConfig(bandwidth=args.bandwidth),
        )
    except (SingularDesign, SingularSigma, RankDeficient, NoConvergence) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    text = report.to_markdown() if args.format == "markdown" else report.to_csv()
    _write_output(text, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqpanel",
        description="Quantile panel-data estimation with smoothed quantile "
                    "regression, bias corrections, and sandwich confidence intervals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit estimators on a CSV panel")
    est.add_argument("--input", required=True, help="long-format CSV: id,t,y,x1,...,xd")
    est.add_argument("--tau", required=True,
                     type=lambda s: _parse_float_list(s, "tau"),
                     help="comma-separated quantile levels in (0,1)")
    est.add_argument("--estimator", default="all",
                     choices=["canay", "sqr", "abc", "spj", "all"])
    est.add_argument("--bandwidth", type=float, default=0.8)
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--output", default=None, help="write here instead of stdout")
    est.add_argument("--format", default="csv", choices=["csv", "markdown"])
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run the seeded replication study")
    sim.add_argument("--model", type=int, required=True, choices=[1, 2, 3, 4])
    sim.add_argument("--n", required=True, type=lambda s: _parse_int_list(s, "n"),
                     help="comma-separated numbers of individuals")
    sim.add_argument("--t", required=True, type=lambda s: _parse_int_list(s, "t"),
                     help="comma-separated numbers of periods")
    sim.add_argument("--tau", required=True, type=lambda s: _parse_float_list(s, "tau"))
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--jobs", type=int, default=None,
                     help="worker processes (default: all cores)")
    sim.add_argument("--estimators", default="canay,abc,spj",
                     help="comma-separated subset of canay,sqr,abc,spj")
    sim.add_argument("--bandwidth", type=float, default=0.8)
    sim.add_argument("--output", default=None, help="write here instead of stdout")
    sim.add_argument("--format", default="csv", choices=["csv", "markdown"])
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
