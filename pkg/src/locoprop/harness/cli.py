"""Command-line entry point: ``locoprop [options]``."""

import argparse
import logging
import sys

from ..errors import LocoPropError
from .config import ARCHITECTURES, METHODS, TrainConfig, config_from_mapping, load_config
from .training import run_training, write_csv

DESCRIPTION = """\
Train a dense autoencoder with a first-order baseline, K-FAC, or layerwise
local losses, and write one CSV row of metrics per epoch.

Each epoch shuffles the training rows with a fresh seed-derived permutation
and drops the final partial batch. A seed-derived share of the data (eval_fraction,
10%% by default) is held out for the eval loss.
"""

# flag -> TrainConfig field
_FLAGS = {
    "method": dict(choices=METHODS, help="baseline optimizer, kfac, or locoprop"),
    "variant": dict(help="local loss: loco-s, loco-m, poco-s or poco-m"),
    "inner": dict(help="optimizer for the local iterations"),
    "gamma": dict(type=float, help="target step size"),
    "eta": dict(type=float, help="peak learning rate (inner rate for locoprop)"),
    "local_iters": dict(type=int, help="local iterations per batch"),
    "arch": dict(help=f"preset {sorted(ARCHITECTURES)} or comma-separated hidden widths"),
    "transfer": dict(help="hidden transfer, e.g. tanh, sigmoid, relu, leaky_relu:0.1"),
    "final_loss": dict(help="squared, sigmoid_ce or softmax_kl"),
    "epochs": dict(type=int),
    "batch_size": dict(type=int),
    "seed": dict(type=int),
    "data": dict(help="synthetic:DIM:COUNT or PATH[:LIMIT] to an IDX image file"),
    "out": dict(help="metrics CSV path"),
    "workers": dict(type=int, help="threads for per-layer local iterations"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="locoprop",
        description=DESCRIPTION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="flat key = value file of TrainConfig fields")
    for name, kwargs in _FLAGS.items():
        parser.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kwargs)
    parser.add_argument("--no-timing", action="store_true",
                        help="write 0 in elapsed_s so identical runs give identical files")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each epoch")
    return parser


def resolve_config(args):
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in _FLAGS if getattr(args, k) is not None}
    config = config_from_mapping(overrides, config)
    if args.no_timing:
        config = config_from_mapping({"record_time": False}, config)
    return config.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        config = resolve_config(args)
        metrics = run_training(config)
        write_csv(metrics, config.out)
    except (LocoPropError, ValueError, OSError, ArithmeticError) as exc:
        print(f"locoprop: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
