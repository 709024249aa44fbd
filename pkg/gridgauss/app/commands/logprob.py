import argparse

from gridgauss.app.commands.common import common_parser, emit, write_report
from gridgauss.app.core.distribution import log_density_per_sample
from gridgauss.app.schemas.report import SCHEMA_VERSION
from gridgauss.app.utils.gmap_io import load_bundle, load_model


def register(subparsers) -> None:
    parser = subparsers.add_parser("logprob", parents=[common_parser()], help="Log-density of maps under a model")
    parser.add_argument("--model", required=True, help="Model prefix")
    parser.add_argument("--samples", required=True, help="Maps to score (GMAP bundle or CSV)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    bundle = load_bundle(args.samples)
    per_sample = log_density_per_sample(model, bundle)
    total = float(per_sample.sum())
    result = {
        "schema_version": SCHEMA_VERSION,
        "count": bundle.count,
        "log_density": [float(value) for value in per_sample],
        "total_log_density": total,
        "nll": -total,
        "nll_per_sample": -total / bundle.count,
    }
    write_report(args.out, result)
    emit({key: value for key, value in result.items() if key != "log_density"})
    return 0
