#!/usr/bin/env python3
"""
Main entry point for the debiased ATE application

    python src/main.py simulate --generator HET --n 500 --out data/
    python src/main.py fit data/HET_n500_seed0.csv --method gp-ps --plot --out results/fit
    python src/main.py bench --preset het500 --reps 50 --out results/het500
"""

import os
import sys
import argparse
import logging

# Add the parent directory to Python path to allow imports
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from src import config  # noqa: E402
from src.data_model import ColumnSchema, save_dataset  # noqa: E402
from src.errors import DebiasATEError, ReplicationFailureError  # noqa: E402
from src.harness import GENERATORS, METHODS, PRESETS, TARGETS, BenchConfig, fit_single, run_replications  # noqa: E402
from src.report import format_table  # noqa: E402
from src.simgen import IHDP_B, gen_ihdp_outcomes, gen_synthetic, load_ihdp_covariates  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REPLICATION_FAILURE = 2


def _common_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=config.SEED, help="Master random seed")
    parent.add_argument("--out", default=config.OUT_DIR, help="Output directory")
    parent.add_argument("--log-level", default=config.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    return parent


def _estimation_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--draws", type=int, default=config.DRAWS, help="Posterior draws P")
    parent.add_argument("--alpha", type=float, default=config.ALPHA, help="Credible level is 1 - alpha")
    parent.add_argument("--trunc-lo", type=float, default=config.TRUNC_LO, help="Propensity lower bound")
    parent.add_argument("--trunc-hi", type=float, default=config.TRUNC_HI, help="Propensity upper bound")
    parent.add_argument("--nu", type=float, default=None, help="Override the calibrated correction scale")
    return parent


def _schema_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--treatment-col", default="r", help="Treatment column of the CSV dataset")
    parent.add_argument("--outcome-col", default="y", help="Outcome column of the CSV dataset")
    parent.add_argument("--features", help="Comma-separated feature columns (default: all others)")
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with the simulate, fit and bench subcommands"""
    common = _common_options()
    estimation = _estimation_options()
    schema = _schema_options()
    parser = argparse.ArgumentParser(description="Debiased Bayesian average treatment effect estimation")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="Write a simulated dataset as CSV")
    simulate.add_argument("--generator", choices=["HOM", "HET", IHDP_B], default="HET")
    simulate.add_argument("--n", type=int, default=500)
    simulate.add_argument("--d", type=int, default=100)
    simulate.add_argument("--ihdp-covariates", help="IHDP covariate CSV with a 'treatment' column")

    fit = commands.add_parser("fit", parents=[common, estimation, schema], help="Fit one method to a CSV dataset")
    fit.add_argument("data", help="CSV dataset with a header row")
    fit.add_argument("--method", choices=list(METHODS), default="gp-ps")
    fit.add_argument("--no-randomize-f", action="store_true",
                     help="Weigh every unit 1/n instead of Bayesian bootstrap weights")
    fit.add_argument("--plot", action="store_true", help="Save posterior.png")
    fit.add_argument("--truth", type=float, default=None, help="True value to mark on the plot")

    bench = commands.add_parser("bench", parents=[common, estimation, schema], help="Run a replication study")
    bench.add_argument("--preset", choices=list(PRESETS))
    bench.add_argument("--generator", choices=list(GENERATORS))
    bench.add_argument("--n", type=int)
    bench.add_argument("--d", type=int)
    bench.add_argument("--reps", type=int, default=config.REPS)
    bench.add_argument("--methods", help="Comma-separated method keys (default: every method the design supports)")
    bench.add_argument("--target", choices=list(TARGETS))
    bench.add_argument("--ihdp-covariates", help="IHDP covariate CSV with a 'treatment' column")
    bench.add_argument("--data", help="Dataset for the 'file' generator")
    bench.add_argument("--truth", type=float, default=None, help="Known effect for the 'file' generator")
    bench.add_argument("--workers", type=int, default=config.THREADS)
    return parser


def _split(value):
    return tuple(part.strip() for part in value.split(",") if part.strip()) if value else None


def run_simulate(args) -> int:
    if args.generator == IHDP_B:
        if not args.ihdp_covariates:
            print("Error: IHDP-B needs --ihdp-covariates")
            return EXIT_ERROR
        features, R, names = load_ihdp_covariates(args.ihdp_covariates)
        instance = gen_ihdp_outcomes(features, R, seed=args.seed)
        n = features.shape[0]
    else:
        instance = gen_synthetic(args.n, args.d, args.generator, seed=args.seed)
        n = args.n

    path = os.path.join(args.out, f"{args.generator}_n{n}_seed{args.seed}.csv")
    save_dataset(instance.data, path)
    print(f"✓ Wrote {path}")
    if instance.true_ate is not None:
        print(f"  True ATE:  {instance.true_ate:.6f}")
    print(f"  True CATE: {instance.true_cate:.6f}")
    return EXIT_OK


def _schema_from_args(args) -> ColumnSchema:
    return ColumnSchema(treatment=args.treatment_col, outcome=args.outcome_col, features=_split(args.features))


def run_fit(args) -> int:
    schema = _schema_from_args(args)
    bench = BenchConfig(draws=args.draws, alpha=args.alpha, seed=args.seed, nu_override=args.nu,
                        trunc_lo=args.trunc_lo, trunc_hi=args.trunc_hi, out_dir=args.out)
    randomized = False if args.no_randomize_f else None
    result = fit_single(args.data, schema, args.method, bench, randomized=randomized,
                        plot=args.plot, truth=args.truth)
    print(f"✓ {METHODS[args.method].label}: estimate {result.estimate:.4f}, "
          f"{100 * (1 - args.alpha):g}% interval [{result.ci_low:.4f}, {result.ci_high:.4f}]")
    print(f"  Results written to {args.out}")
    return EXIT_OK


def bench_config_from_args(args) -> BenchConfig:
    """Preset values first, then any explicitly given flags"""
    settings = dict(PRESETS.get(args.preset, {}))
    for key in ("generator", "n", "d"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    return BenchConfig(
        replications=args.reps, methods=_split(args.methods), target=args.target,
        draws=args.draws, alpha=args.alpha, seed=args.seed, nu_override=args.nu,
        trunc_lo=args.trunc_lo, trunc_hi=args.trunc_hi, out_dir=args.out,
        ihdp_covariates=args.ihdp_covariates, data_path=args.data, data_schema=_schema_from_args(args),
        truth=args.truth, workers=args.workers, **settings,
    )


def run_bench(args) -> int:
    bench = bench_config_from_args(args)
    try:
        report = run_replications(bench)
    except ReplicationFailureError as e:
        print(f"✗ {e}")
        print(f"  Partial results written to {bench.out_dir}")
        return EXIT_REPLICATION_FAILURE
    print(format_table(report))
    print(f"✓ Report written to {bench.out_dir} ({report.wall_clock:.1f} s)")
    return EXIT_OK


COMMANDS = {"simulate": run_simulate, "fit": run_fit, "bench": run_bench}


def main(argv=None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DebiasATEError, ValueError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"✗ Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
