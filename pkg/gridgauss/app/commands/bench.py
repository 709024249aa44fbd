"""
``bench``: Jacobi sampling wall time across grid sizes.

Ratios are reported raw (consecutive sizes) and normalised to one doubling
of the pixel count, ``(t2 / t1) ** (log 2 / log(N2 / N1))``.
"""

import argparse
import math
import time

from gridgauss.app.commands.common import common_parser, emit, parse_sizes, write_report
from gridgauss.app.core.distribution import sample
from gridgauss.app.core.synth import random_structured_gaussian
from gridgauss.app.schemas.evaluation import BenchEntry, BenchReport
from gridgauss.app.utils.logging_config import get_command_logger
from gridgauss.app.utils.rng import seed_from_option, spawn_seeds

DEFAULT_SIZES = "32x32,64x64,128x128,256x256"


def per_doubling_ratio(ratio: float, growth: float) -> float:
    """Time ratio for a pixel-count growth, rescaled to one doubling."""
    if growth == 1:
        return math.nan
    return ratio ** (math.log(2.0) / math.log(growth))


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", parents=[common_parser()], help="Time Jacobi sampling across grid sizes")
    parser.add_argument("--sizes", default=DEFAULT_SIZES, help="Comma-separated HxW list")
    parser.add_argument("--jacobi-iters", type=int, default=100)
    parser.add_argument("--count", type=int, default=1)
    parser.add_argument("--radius", type=int, choices=(1, 2), default=1)
    parser.add_argument("--repeats", type=int, default=1, help="Best of this many timings per size")
    parser.add_argument("--report", default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    log = get_command_logger("bench")
    seed = seed_from_option(args.seed)
    entries = []
    for shape in parse_sizes(args.sizes):
        model_seed, sample_seed = spawn_seeds(seed, 2)
        model = random_structured_gaussian(shape, args.radius, model_seed)
        timings = []
        for _ in range(max(1, args.repeats)):
            started = time.perf_counter()
            sample(model, args.count, sample_seed, iterations=args.jacobi_iters)
            timings.append(time.perf_counter() - started)
        seconds = min(timings)
        entries.append(
            BenchEntry(
                height=shape.height,
                width=shape.width,
                pixels=shape.pixel_count,
                seconds=seconds,
                seconds_per_sample=seconds / args.count,
            )
        )
        log.info(f"{shape}: {seconds:.4f}s", extra={"grid": str(shape), "seconds": seconds})

    ratios = []
    per_doubling = []
    for previous, current in zip(entries, entries[1:]):
        ratio = current.seconds / previous.seconds if previous.seconds > 0 else math.inf
        ratios.append(ratio)
        per_doubling.append(per_doubling_ratio(ratio, current.pixels / previous.pixels))

    report = BenchReport(
        jacobi_iterations=args.jacobi_iters,
        count=args.count,
        radius=args.radius,
        repeats=args.repeats,
        entries=entries,
        ratios=ratios,
        ratios_per_pixel_doubling=per_doubling,
    )
    write_report(args.report or args.out, report)
    emit({"sizes": [str(entry.pixels) for entry in entries], "ratios_per_pixel_doubling": per_doubling})
    return 0
