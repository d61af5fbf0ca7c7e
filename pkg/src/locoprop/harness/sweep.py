"""Learning-rate grid sweeps over independent training runs."""

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

from ..errors import NumericError
from .training import run_training


class SweepResult(NamedTuple):
    config: object
    final_loss: float  # inf when the run diverged
    rows: tuple


def _run_one(config, data):
    try:
        rows = tuple(run_training(config, data))
    except NumericError:
        return SweepResult(config, math.inf, ())
    loss = rows[-1].train_loss
    return SweepResult(config, loss if math.isfinite(loss) else math.inf, rows)


def run_configs(configs, data=None, processes=None):
    """Run every config; parallel across processes, results in input order."""
    configs = list(configs)
    processes = processes or os.cpu_count() or 1
    if processes <= 1 or len(configs) <= 1:
        return [_run_one(c, data) for c in configs]
    with ProcessPoolExecutor(max_workers=min(processes, len(configs))) as pool:
        return list(pool.map(_run_one, configs, [data] * len(configs)))


def lr_grid(config, etas, data=None, processes=None):
    """Best run of ``config`` over the learning rates ``etas``.

    Returns ``(best, all_results)``; ties go to the smaller rate.
    """
    results = run_configs(
        [dataclasses.replace(config, eta=float(e)) for e in etas], data, processes
    )
    best = min(results, key=lambda r: (r.final_loss, r.config.eta))
    return best, results
