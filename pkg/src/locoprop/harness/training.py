"""Autoencoder training loop and metrics CSV."""

import csv
import logging
import time
from contextlib import nullcontext
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import LocoPropError, NumericError
from ..local_loss import Variant, locoprop_train_step, worker_pool
from ..network import final_loss, forward, glorot_layers, loss_and_grads
from ..optimizers import OptimizerState, Schedule, optimizer_step, schedule_lr
from ..preconditioned import KfacStats, kfac_step, kfac_update_stats, sampled_pre_grads
from .data import DatasetSource, holdout_split

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "step", "lr", "train_loss", "eval_loss", "elapsed_s")


class MetricRow(NamedTuple):
    epoch: int
    step: int
    lr: float
    train_loss: float
    eval_loss: float
    elapsed_s: float


class TrainingError(NumericError):
    pass


def _streams(seed):
    """Independent generators for init, split, shuffling and label sampling."""
    return [np.random.default_rng([seed, k]) for k in range(4)]


def dataset_loss(layers, data, loss, chunk=5000):
    """Mean final loss over ``(count, features)`` rows."""
    if data.shape[0] == 0:
        return float("nan")
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        x = data[start:start + chunk].T
        out = forward(layers, x)[-1]
        total += final_loss(loss, x, out.post_act, out.pre_act) * x.shape[1]
    return total / data.shape[0]


@dataclass
class _Stepper:
    """Applies one update of the configured method to a batch."""

    config: object
    layers: list
    executor: object = None

    def __post_init__(self):
        cfg = self.config
        n = len(self.layers)
        self.states = [OptimizerState() for _ in range(n)]
        if cfg.method == "locoprop":
            self.inner = cfg.optimizer(cfg.inner, cfg.eta)
            self.variant = Variant(cfg.variant)
            self.inner_states = [OptimizerState() for _ in range(n)] if cfg.carry_inner_state else None
        elif cfg.method == "kfac":
            self.stats = [
                KfacStats.zeros(l.d_out, l.d_in + 1, cfg.kfac_decay, cfg.kfac_damping)
                for l in self.layers
            ]
            self.sample_rng = _streams(cfg.seed)[3]
        else:
            self.spec = cfg.optimizer(cfg.method, cfg.eta)

    def __call__(self, x, lr):
        cfg = self.config
        if cfg.method == "locoprop":
            self.layers = locoprop_train_step(
                self.layers, x, x, cfg.final_loss, self.variant, cfg.gamma, self.inner,
                cfg.local_iters, base_lr=lr, local_decay=cfg.local_decay,
                eta=cfg.prox_eta or None, proximal=cfg.prox_eta > 0,
                executor=self.executor, states=self.inner_states,
            )
            return
        _, grads, caches = loss_and_grads(self.layers, x, x, cfg.final_loss)
        if cfg.method == "kfac":
            stat_grads = (
                sampled_pre_grads(self.layers, caches, cfg.final_loss, self.sample_rng)
                if cfg.kfac_sampled else [c.pre_grad for c in caches]
            )
            for m, layer in enumerate(self.layers):
                self.stats[m] = kfac_update_stats(self.stats[m], stat_grads[m], caches[m].input)
                w = kfac_step(layer.weights, grads[m], self.stats[m], lr)
                layer.weights = w * (1.0 - lr * cfg.weight_decay)
            return
        for m, layer in enumerate(self.layers):
            layer.weights, self.states[m] = optimizer_step(
                self.spec, self.states[m], layer.weights, grads[m], lr
            )


def run_training(config, data=None):
    """Train the configured autoencoder; returns one ``MetricRow`` per epoch.

    Each epoch visits the training rows in a fresh seed-derived order and
    drops the final partial batch. A held-out ``eval_fraction`` of the data
    supplies the eval loss.
    """
    return train_model(config, data)[0]


def train_model(config, data=None):
    """Like ``run_training`` but returns ``(rows, layers)``."""
    config.validate()
    init_rng, split_rng, shuffle_rng, _ = _streams(config.seed)
    if data is None:
        data = DatasetSource(config.data).load(config.seed)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a nonempty (count, features) array")
    train, held_out = holdout_split(data, config.eval_fraction, split_rng)
    n_train = train.shape[0]
    batches = n_train // config.batch_size
    if batches == 0:
        raise ValueError(f"batch size {config.batch_size} exceeds {n_train} training rows")
    total = config.epochs * batches
    warmup = min(config.warmup_epochs * batches, total - 1)
    schedule = Schedule(config.eta, warmup, total)

    layers = glorot_layers(config.widths(data.shape[1]), config.transfers(), init_rng)
    rows = []
    start = time.perf_counter()
    pool = worker_pool(config.workers)
    with pool if pool is not None else nullcontext():
        stepper = _Stepper(config, layers, pool)
        step = 0
        for epoch in range(1, config.epochs + 1):
            perm = shuffle_rng.permutation(n_train)
            for k in range(batches):
                idx = perm[k * config.batch_size:(k + 1) * config.batch_size]
                lr = schedule_lr(schedule, step)
                try:
                    stepper(train[idx].T, lr)
                except LocoPropError as exc:
                    raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
                step += 1
            try:
                train_loss = dataset_loss(stepper.layers, train, config.final_loss)
                eval_loss = dataset_loss(stepper.layers, held_out, config.final_loss)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            if not np.isfinite(train_loss):
                raise TrainingError(f"epoch {epoch}, step {step}: training loss is not finite")
            elapsed = time.perf_counter() - start if config.record_time else 0.0
            rows.append(MetricRow(epoch, step, lr, train_loss, eval_loss, elapsed))
            log.info("epoch %d train %.6g eval %.6g", epoch, train_loss, eval_loss)
    return rows, stepper.layers


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(metrics, path):
    """Write metric rows with 17 significant digits."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in metrics:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc.strerror or exc}") from exc


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            MetricRow(int(r[0]), int(r[1]), *(float(v) for v in r[2:])) for r in reader
        ]
