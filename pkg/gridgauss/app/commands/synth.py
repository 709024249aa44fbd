import argparse

from gridgauss.app.commands.common import common_parser, emit, require_out, write_bundle_output
from gridgauss.app.core.grid import GridShape
from gridgauss.app.core.synth import generate, lag1_autocorrelation
from gridgauss.app.schemas.synth import SynthKind, SynthSpec
from gridgauss.app.utils.gmap_io import read_map, save_model
from gridgauss.app.utils.logging_config import get_command_logger
from gridgauss.app.utils.rng import seed_from_option


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", parents=[common_parser()], help="Generate a synthetic ensemble")
    parser.add_argument("--kind", choices=[kind.value for kind in SynthKind], required=True)
    parser.add_argument("--size", default="8x8", help="Grid size HxW")
    parser.add_argument("--count", type=int, required=True)
    parser.add_argument("--radius", type=int, choices=(1, 2), default=1, help="ground_truth_gmrf pattern radius")
    parser.add_argument("--scaled", action="store_true", help="ground_truth_gmrf: scaled parameterisation")
    parser.add_argument("--length-scale", type=float, default=2.0, help="smooth_field bump width in pixels")
    parser.add_argument("--amplitude", type=float, default=1.0)
    parser.add_argument("--noise-std", type=float, default=0.05, help="smooth_field i.i.d. nugget")
    parser.add_argument("--bumps", type=int, default=None)
    parser.add_argument("--std", type=float, default=1.0, help="diagonal_noise standard deviation")
    parser.add_argument("--std-map", default=None, help="diagonal_noise per-pixel std map (overrides --std)")
    parser.add_argument("--mean", type=float, default=0.0, help="Constant mean offset")
    parser.add_argument("--model-out", default=None, help="Save the generating model under this prefix")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("synth")
    out = require_out(args)
    shape = GridShape.parse(args.size)
    seed = seed_from_option(args.seed)
    std = read_map(args.std_map).tolist() if args.std_map else args.std
    spec = SynthSpec(
        kind=args.kind,
        height=shape.height,
        width=shape.width,
        count=args.count,
        seed=seed,
        radius=args.radius,
        scaled=args.scaled,
        length_scale=args.length_scale,
        amplitude=args.amplitude,
        noise_std=args.noise_std,
        std=std,
        mean=args.mean,
        bumps=args.bumps,
    )
    bundle, model = generate(spec)
    paths = write_bundle_output(out, bundle, args.format, args.precision)
    if args.model_out and model is not None:
        paths.extend(save_model(args.model_out, model, args.precision))
    elif args.model_out:
        log.warning(f"{spec.kind.value} has no generating model to save", extra={"kind": spec.kind.value})

    summary = {"outputs": [str(path) for path in paths], "count": bundle.count, "seed": seed}
    if shape.pixel_count > 1:
        summary["lag1_autocorrelation"] = lag1_autocorrelation(bundle)
    emit(summary)
    return 0
