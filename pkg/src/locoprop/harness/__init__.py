"""Experiment driver: data, configuration, training loop and CLI."""

from .config import ARCHITECTURES, TrainConfig, load_config
from .data import DatasetSource, holdout_split, load_idx, make_synthetic, write_idx
from .training import MetricRow, read_csv, run_training, train_model, write_csv
from .sweep import SweepResult, lr_grid, run_configs
