"""Experiment configuration.

A config file is flat ``key = value`` text whose keys are ``TrainConfig``
field names; a leading ``[train]`` section header is optional.
"""

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..local_loss import Variant
from ..network import FinalLoss
from ..optimizers import OptimizerSpec, Rule
from ..transfer import TransferKind

ARCHITECTURES = {
    "standard": [1000, 500, 250, 30, 250, 500, 1000],
    "deep": [1000] + [500] * 8 + [250, 30, 250] + [500] * 8 + [1000],
    "wide": [4000, 2000, 1000, 120, 1000, 2000, 4000],
}

BASELINES = tuple(r.value for r in Rule) + ("kfac",)
METHODS = BASELINES + ("locoprop",)


@dataclass
class TrainConfig:
    arch: str = "standard"
    transfer: str = "tanh"
    final_loss: str = "sigmoid_ce"
    method: str = "rmsprop"
    variant: str = "loco-m"
    inner: str = "rmsprop"
    eta: float = 1e-3
    gamma: float = 1.0
    local_iters: int = 10
    local_decay: bool = True
    prox_eta: float = 0.0
    carry_inner_state: bool = False
    beta1: float = 0.9
    beta2: float = 0.0
    eps: float = 1e-8
    momentum: float = 0.9
    kfac_decay: float = 0.95
    kfac_damping: float = 1e-3
    kfac_sampled: bool = False
    batch_size: int = 1000
    epochs: int = 100
    warmup_epochs: int = 5
    weight_decay: float = 1e-5
    eval_fraction: float = 0.1
    seed: int = 0
    data: str = "synthetic:784:10000"
    out: str = "metrics.csv"
    workers: int = 1
    record_time: bool = True

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        Variant(self.variant)
        FinalLoss(self.final_loss)
        TransferKind.parse(self.transfer)
        Rule(self.inner)
        if any(w <= 0 for w in self.hidden_widths()):
            raise ValueError("widths must be positive")
        for name in ("eta", "gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.local_iters < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("local_iters, batch_size and epochs must be positive")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in [0, 1)")
        return self

    def hidden_widths(self):
        if self.arch in ARCHITECTURES:
            return list(ARCHITECTURES[self.arch])
        return [int(w) for w in self.arch.replace(" ", "").split(",") if w]

    def widths(self, input_dim):
        return [input_dim] + self.hidden_widths() + [input_dim]

    def transfers(self):
        hidden = TransferKind.parse(self.transfer)
        output = FinalLoss(self.final_loss).matching_transfer
        return [hidden] * (len(self.hidden_widths())) + [output]

    def optimizer(self, rule, lr):
        """Optimizer spec for ``rule`` with this config's hyperparameters.

        ``beta2 = 0`` selects the rule default: 0.9 as the RMSProp decay,
        0.999 for Adam.
        """
        rule = Rule(rule)
        beta2 = self.beta2 or (0.9 if rule is Rule.RMSPROP else 0.999)
        return OptimizerSpec(
            rule, lr, self.beta1, beta2, self.eps, self.momentum, self.weight_decay
        )


def _convert(field, text):
    kind = field.type
    if kind is bool:
        lowered = str(text).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{field.name}: expected a boolean, got {text!r}")
    return kind(text)


def config_from_mapping(values, base=None):
    """Apply ``values`` (keys may use ``-`` or ``_``) on top of ``base``."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    updates = {}
    for key, value in values.items():
        name = key.replace("-", "_")
        if name not in fields:
            raise ValueError(f"unknown config key {key!r}")
        updates[name] = _convert(fields[name], value)
    return dataclasses.replace(base or TrainConfig(), **updates)


def load_config(path, base=None):
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[train]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text, source=str(path))
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    return config_from_mapping(values, base)


def dump_config(config):
    """Render a config as the flat text format ``load_config`` reads."""
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())
