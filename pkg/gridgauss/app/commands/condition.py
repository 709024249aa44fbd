import argparse
from pathlib import Path

from gridgauss.app.commands.common import common_parser, emit, require_out, write_bundle_output, write_map_output
from gridgauss.app.core.conditioning import Conditioning, PixelMask, conditional_mean, conditional_sample
from gridgauss.app.core.distribution import sample
from gridgauss.app.exceptions import InvalidArgumentError
from gridgauss.app.utils.gmap_io import load_mask, load_model, read_map, save_mask
from gridgauss.app.utils.logging_config import get_command_logger
from gridgauss.app.utils.rng import seed_from_option, spawn_seeds


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "condition", parents=[common_parser()], help="Conditional samples and mean given known pixel values"
    )
    parser.add_argument("--model", required=True, help="Model prefix")
    parser.add_argument("--mask", default=None, help="Known-pixel mask map (nonzero = known)")
    parser.add_argument("--random-known", type=int, default=None, help="Condition on N random pixels instead of --mask")
    parser.add_argument("--values", default=None, help="Values map; defaults to a model draw with --random-known")
    parser.add_argument("--count", type=int, default=1)
    parser.add_argument("--jacobi-iters", type=int, default=None)
    parser.add_argument("--exact", action="store_true", help="Exact joint draws instead of Jacobi")
    parser.add_argument("--cg-rtol", type=float, default=None, help="Default: GMRF_CG_RTOL")
    parser.add_argument("--mean-out", default=None, help="Also write the conditional mean map here")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("condition")
    out = require_out(args)
    model = load_model(args.model)
    seed = seed_from_option(args.seed)
    mask_seed, values_seed, sample_seed = spawn_seeds(seed, 3)

    if (args.mask is None) == (args.random_known is None):
        raise InvalidArgumentError("give exactly one of --mask and --random-known")
    if args.mask is not None:
        if args.values is None:
            raise InvalidArgumentError("--mask needs --values")
        mask = load_mask(args.mask)
    else:
        mask = PixelMask.random(model.shape, args.random_known, mask_seed)
        save_mask(f"{out}.mask.gmap", mask)

    if args.values is not None:
        values = read_map(args.values)
    else:
        values = sample(model, 1, values_seed, exact=True).values[0]
    cond = Conditioning(mask, values)
    log.info(
        f"Conditioning on {mask.known_count} known pixels",
        extra={"model": args.model, "known": mask.known_count, "seed": seed},
    )

    draws = conditional_sample(
        model, cond, args.count, sample_seed, iterations=args.jacobi_iters, rtol=args.cg_rtol, exact=args.exact
    )
    paths = write_bundle_output(out, draws, args.format, args.precision)
    if args.mean_out:
        mean = conditional_mean(model, cond, rtol=args.cg_rtol)
        fmt = "csv" if Path(args.mean_out).suffix.lower() == ".csv" else "gmap"
        paths.append(write_map_output(args.mean_out, mean, fmt, args.precision, (float(mean.min()), float(mean.max()))))
    emit(
        {
            "outputs": [str(path) for path in paths],
            "known_pixels": mask.known_count,
            "count": draws.count,
            "seed": seed,
        }
    )
    return 0
