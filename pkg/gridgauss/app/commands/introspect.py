import argparse

import numpy as np

from gridgauss.app.commands.common import common_parser, emit, parse_pixel, require_out
from gridgauss.app.core.distribution import (
    COVARIANCE_ROW_CLIP,
    covariance_row,
    marginal_variance,
    visualize_covariance_row,
)
from gridgauss.app.utils.gmap_io import load_model, write_grid
from gridgauss.app.utils.pgm import write_signed_pgm, write_split_pgm


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "introspect", parents=[common_parser()], help="Covariance row of one pixel, raw or as a heatmap"
    )
    parser.add_argument("--model", required=True, help="Model prefix")
    parser.add_argument("--pixel", required=True, help="Pixel as y,x")
    parser.add_argument("--render", choices=("gmap", "csv", "pgm"), default=None, help="Overrides --format")
    parser.add_argument("--split", action="store_true", help="PGM: separate positive and negative images")
    parser.add_argument("--clip", type=float, default=COVARIANCE_ROW_CLIP, help="PGM range in signed-sqrt units")
    parser.add_argument("--method", choices=("exact", "jacobi"), default="exact")
    parser.add_argument("--jacobi-iters", type=int, default=None)
    parser.add_argument("--variance-out", default=None, help="Also write the marginal variance map (GMAP)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    out = require_out(args)
    model = load_model(args.model)
    pixel = parse_pixel(args.pixel, model.shape)
    row = covariance_row(model, pixel, iterations=args.jacobi_iters, method=args.method)
    fmt = args.render or args.format

    if fmt == "pgm":
        rendered = visualize_covariance_row(row, args.clip)
        if args.split:
            paths = list(write_split_pgm(out, rendered, args.clip))
        else:
            paths = [write_signed_pgm(out, rendered, args.clip)]
    else:
        paths = [write_grid(out, row, fmt, args.precision)]
    if args.variance_out:
        paths.append(write_grid(args.variance_out, marginal_variance(model), "gmap", args.precision))

    emit(
        {
            "outputs": [str(path) for path in paths],
            "pixel": pixel,
            "variance": float(row.ravel()[pixel]),
            "max_abs_covariance": float(np.max(np.abs(row))),
        }
    )
    return 0
