import argparse

from gridgauss.app.commands.common import common_parser, emit, require_out, write_bundle_output
from gridgauss.app.core.distribution import sample
from gridgauss.app.utils.gmap_io import load_model
from gridgauss.app.utils.logging_config import get_command_logger
from gridgauss.app.utils.rng import seed_from_option


def register(subparsers) -> None:
    parser = subparsers.add_parser("sample", parents=[common_parser()], help="Draw samples from a saved model")
    parser.add_argument("--model", required=True, help="Model prefix")
    parser.add_argument("--count", type=int, default=1)
    parser.add_argument("--jacobi-iters", type=int, default=None, help="Jacobi iterations J (default 1000)")
    parser.add_argument("--exact", action="store_true", help="Exact back-substitution instead of Jacobi")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("sample")
    out = require_out(args)
    model = load_model(args.model)
    seed = seed_from_option(args.seed)
    log.info(f"Sampling {args.count} maps", extra={"model": args.model, "seed": seed, "exact": args.exact})

    draws = sample(model, args.count, seed, iterations=args.jacobi_iters, exact=args.exact)
    paths = write_bundle_output(out, draws, args.format, args.precision)
    emit({"outputs": [str(path) for path in paths], "count": draws.count, "seed": seed})
    return 0
