import argparse

from gridgauss.app.commands.common import common_parser, emit, require_out, write_report
from gridgauss.app.core.fitting import fit
from gridgauss.app.core.grid import canonical_pattern
from gridgauss.app.schemas.fit import FitConfig, FitInit
from gridgauss.app.utils.gmap_io import load_bundle, read_map, save_model
from gridgauss.app.utils.logging_config import get_command_logger
from gridgauss.app.utils.rng import seed_from_option


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "fit", parents=[common_parser()], help="Fit a structured Gaussian to a sample bundle; --out is the model prefix"
    )
    parser.add_argument("--samples", required=True, help="Sample bundle (GMAP, one channel per sample, or CSV)")
    parser.add_argument("--radius", type=int, choices=(1, 2), default=1)
    parser.add_argument("--diagonal-only", action="store_true", help="Fit the diagonal baseline only")
    parser.add_argument("--scaled", action="store_true", help="Use the tanh-scaled parameterisation")
    parser.add_argument("--fixed-mean", default=None, help="Hold the mean at this map instead of fitting it")
    parser.add_argument("--max-iters", type=int, default=2000)
    parser.add_argument("--learning-rate", type=float, default=1e-2)
    parser.add_argument("--tol", type=float, default=1e-9, help="Relative NLL change that ends the fit")
    parser.add_argument("--init", choices=[kind.value for kind in FitInit], default=FitInit.SMALL_OFFDIAG.value)
    parser.add_argument("--variance-floor", type=float, default=None, help="Default: GMRF_VARIANCE_FLOOR")
    parser.add_argument("--report", default=None, help="Write the FitReport JSON here")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("fit")
    prefix = require_out(args)
    bundle = load_bundle(args.samples)
    fixed_mean = read_map(args.fixed_mean) if args.fixed_mean else None
    overrides = {} if args.variance_floor is None else {"variance_floor": args.variance_floor}
    config = FitConfig(
        max_iterations=args.max_iters,
        learning_rate=args.learning_rate,
        convergence_tol=args.tol,
        init=args.init,
        scaled_parameterization=args.scaled,
        fit_mean=fixed_mean is None,
        diagonal_only=args.diagonal_only,
        **overrides,
    )
    seed = seed_from_option(args.seed)
    log.info(f"Fitting {bundle.count} samples", extra={"samples": args.samples, "seed": seed})

    model, report = fit(bundle, canonical_pattern(args.radius), config, seed, mean=fixed_mean)
    save_model(prefix, model, args.precision)
    write_report(args.report, report)
    emit(
        {
            "model": prefix,
            "final_nll": report.final_nll,
            "iterations": report.iterations,
            "converged": report.converged,
            "seed": seed,
        }
    )
    return 0
