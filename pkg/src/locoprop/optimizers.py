"""First-order update rules and learning-rate schedules.

``optimizer_step`` is functional: it returns fresh parameter and state
objects and never mutates its inputs, so separate layers can step on
separate threads without coordination.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ShapeError


class Rule(str, enum.Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    NESTEROV = "nesterov"
    ADAGRAD = "adagrad"
    RMSPROP = "rmsprop"
    ADAM = "adam"


@dataclass(frozen=True)
class OptimizerSpec:
    """Hyperparameters of one update rule.

    ``beta2`` doubles as the RMSProp squared-gradient decay. ``momentum`` is
    the heavy-ball coefficient for Momentum, Nesterov and RMSProp.
    """

    rule: Rule
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for name in ("beta1", "beta2", "momentum"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class OptimizerState:
    slots: dict = field(default_factory=dict)
    step: int = 0


def optimizer_step(spec, state, params, grad, lr_now):
    """One update of ``spec.rule``; returns ``(params, state)``.

    Decoupled weight decay multiplies the stepped parameters by
    ``1 - lr_now * weight_decay``.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"gradient {grad.shape} does not match parameters {params.shape}")
    if lr_now < 0:
        raise ValueError("lr_now must be nonnegative")
    slots = dict(state.slots)
    for name, value in slots.items():
        if value.shape != params.shape:
            raise ShapeError(f"slot {name!r} has shape {value.shape}, expected {params.shape}")
    t = state.step + 1
    rule = spec.rule

    if rule is Rule.SGD:
        update = grad
    elif rule is Rule.MOMENTUM:
        mom = spec.momentum * slots.get("momentum", 0.0) + grad
        slots["momentum"] = mom
        update = mom
    elif rule is Rule.NESTEROV:
        mom = spec.momentum * slots.get("momentum", 0.0) + grad
        slots["momentum"] = mom
        update = grad + spec.momentum * mom
    elif rule is Rule.ADAGRAD:
        acc = slots.get("accumulator", 0.0) + grad * grad
        slots["accumulator"] = acc
        update = grad / (np.sqrt(acc) + spec.eps)
    elif rule is Rule.RMSPROP:
        rho = spec.beta2
        ms = rho * slots.get("mean_square", 0.0) + (1.0 - rho) * grad * grad
        mom = spec.momentum * slots.get("momentum", 0.0) + grad / np.sqrt(ms + spec.eps)
        slots["mean_square"] = ms
        slots["momentum"] = mom
        update = mom
    else:
        m = spec.beta1 * slots.get("m", 0.0) + (1.0 - spec.beta1) * grad
        v = spec.beta2 * slots.get("v", 0.0) + (1.0 - spec.beta2) * grad * grad
        slots["m"] = m
        slots["v"] = v
        m_hat = m / (1.0 - spec.beta1**t)
        v_hat = v / (1.0 - spec.beta2**t)
        update = m_hat / (np.sqrt(v_hat) + spec.eps)

    new = params - lr_now * update
    if spec.weight_decay:
        new = new * (1.0 - lr_now * spec.weight_decay)
    return new, OptimizerState(slots, t)


@dataclass(frozen=True)
class Schedule:
    """Linear warmup from 0 to ``peak_lr`` then linear decay to 0."""

    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not self.peak_lr > 0:
            raise ValueError("peak_lr must be positive")
        if self.warmup_steps < 0 or self.total_steps <= self.warmup_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def schedule_lr(s, step):
    if not 0 <= step < s.total_steps:
        raise RangeError(f"step {step} outside [0, {s.total_steps})")
    if step < s.warmup_steps:
        return s.peak_lr * step / s.warmup_steps
    return s.peak_lr * (s.total_steps - step) / (s.total_steps - s.warmup_steps)


def local_schedule_lr(base_lr, t, T):
    """Decay multiplier ``(T - t) / T`` for local iteration ``t`` of ``T``."""
    if not 0 <= t < T:
        raise RangeError(f"local iteration {t} outside [0, {T})")
    return base_lr * (T - t) / T
