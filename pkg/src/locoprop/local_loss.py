"""Layerwise local-loss training.

After one forward/backward pass every layer gets a fixed target and a fixed
input. Each layer then runs ``T`` inner-optimizer steps on its own local
objective, independently of every other layer. Four constructions are
supported:

========  ================  =====================================  =================
variant   target domain     target                                 local loss
========  ================  =====================================  =================
LOCO_S    pre-activation    a = a_hat - gamma * dL/da_hat          squared, pre
LOCO_M    post-activation   y = y_hat - gamma * dL/da_hat          matching loss
POCO_S    post-activation   y = y_hat - gamma * dL/dy_hat          squared, post
POCO_M    pre-activation    a = a_hat - gamma * dL/dy_hat          dual matching
========  ================  =====================================  =================

Gradients in the targets are per-example gradients (the batch-mean gradient
times the batch size) while local losses are batch means. With this pairing
one SGD step of size ``eta`` on any local loss reproduces a BackProp step
with learning rate ``eta * gamma``.
"""

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import transfer as tf
from .errors import NumericError, ShapeError, StateError
from .network import Layer, backward, forward
from .optimizers import OptimizerState, local_schedule_lr, optimizer_step


class Variant(str, enum.Enum):
    LOCO_S = "loco-s"
    LOCO_M = "loco-m"
    POCO_S = "poco-s"
    POCO_M = "poco-m"

    @property
    def target_domain(self):
        return "pre" if self in (Variant.LOCO_S, Variant.POCO_M) else "post"

    @property
    def uses_post_gradient(self):
        return self in (Variant.POCO_S, Variant.POCO_M)


@dataclass(frozen=True, eq=False)
class TargetSet:
    variant: Variant
    gamma: float
    targets: tuple

    @property
    def domain(self):
        return self.variant.target_domain


def compute_targets(variant, caches, gamma):
    variant = Variant(variant)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    targets = []
    for m, cache in enumerate(caches):
        grad = cache.post_grad if variant.uses_post_gradient else cache.pre_grad
        if grad is None:
            raise StateError(f"layer {m} has no backpropagated gradient")
        step = gamma * cache.batch_size * grad
        base = cache.pre_act if variant.target_domain == "pre" else cache.post_act
        targets.append(base - step)
    return TargetSet(variant, gamma, tuple(targets))


@dataclass(frozen=True, eq=False)
class LocalProblem:
    """One layer's local objective with its input and target held fixed.

    ``anchor`` is the layer's current weights. With ``proximal=True`` the
    regularizer ``||W - anchor||^2 / (2 eta)`` enters the gradient
    explicitly; otherwise it is realized implicitly by taking few, small
    steps starting from ``anchor``.
    """

    layer: int
    inputs: np.ndarray
    target: np.ndarray
    transfer: tf.TransferKind
    variant: Variant
    anchor: np.ndarray
    eta: float = None
    proximal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.transfer.name == tf.STEP:
            raise ValueError("the step transfer has zero gradient almost everywhere")
        d_out = self.anchor.shape[0]
        if self.anchor.shape[1] != self.inputs.shape[0]:
            raise ShapeError(f"layer {self.layer}: weights and inputs disagree")
        if self.target.shape != (d_out, self.inputs.shape[1]):
            raise ShapeError(f"layer {self.layer}: target has shape {self.target.shape}")
        if self.proximal and not (self.eta and self.eta > 0):
            raise ValueError("proximal mode needs a positive eta")

    @property
    def batch_size(self):
        return self.inputs.shape[1]


def local_problems(layers, caches, targets, eta=None, proximal=False):
    return [
        LocalProblem(m, c.input, t, layer.transfer, targets.variant, layer.weights, eta, proximal)
        for m, (layer, c, t) in enumerate(zip(layers, caches, targets.targets))
    ]


def _residual(problem, w):
    a = w @ problem.inputs
    kind, target = problem.transfer, problem.target
    v = problem.variant
    if v is Variant.LOCO_S:
        return a - target
    if v is Variant.LOCO_M:
        return tf.apply(kind, a) - target
    if v is Variant.POCO_S:
        return tf.jacobian_vector(kind, a, tf.apply(kind, a) - target)
    return tf.jacobian_vector(kind, a, a - target)


def data_gradient(problem, w_tilde):
    """Gradient of the batch-mean local loss, regularizer excluded."""
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    if w_tilde.shape != problem.anchor.shape:
        raise ShapeError(f"weights {w_tilde.shape} do not match {problem.anchor.shape}")
    return _residual(problem, w_tilde) @ problem.inputs.T / problem.batch_size


def local_gradient(problem, w_tilde):
    """Gradient the inner optimizer follows.

    The regularizer term is included only for proximal problems.
    """
    grad = data_gradient(problem, w_tilde)
    if problem.proximal:
        grad = grad + (w_tilde - problem.anchor) / problem.eta
    return grad


def local_objective(problem, w_tilde):
    """Batch-mean local loss plus ``||W - anchor||^2 / (2 eta)`` if eta is set.

    A matching-loss target outside the closure of the transfer's range has
    an infinite conjugate, so the value is ``inf`` there even though the
    local gradient stays finite.
    """
    a = np.asarray(w_tilde, dtype=np.float64) @ problem.inputs
    kind, target = problem.transfer, problem.target
    v = problem.variant
    if v is Variant.LOCO_S:
        loss = 0.5 * np.sum((a - target) ** 2)
    elif v is Variant.LOCO_M:
        loss = np.sum(tf.matching_loss(kind, a, target))
    elif v is Variant.POCO_S:
        loss = 0.5 * np.sum((tf.apply(kind, a) - target) ** 2)
    else:
        loss = np.sum(tf.bregman(kind, target, a))
    value = float(loss) / problem.batch_size
    if problem.eta:
        value += 0.5 * float(np.sum((w_tilde - problem.anchor) ** 2)) / problem.eta
    return value


def _iterate(problem, w0, inner, T, base_lr, local_decay, state):
    if T < 1:
        raise ValueError("T must be at least 1")
    base_lr = inner.lr if base_lr is None else base_lr
    w = np.array(w0, dtype=np.float64)
    state = OptimizerState() if state is None else state
    for t in range(T):
        lr = local_schedule_lr(base_lr, t, T) if local_decay else base_lr
        with np.errstate(over="ignore", invalid="ignore"):
            w, state = optimizer_step(inner, state, w, local_gradient(problem, w), lr)
        if not np.all(np.isfinite(w)):
            raise NumericError(f"layer {problem.layer} diverged at local iteration {t}")
    return w, state


def run_local_iterations(problem, w0, inner, T, base_lr=None, local_decay=True):
    """``T`` inner-optimizer steps on the local objective from fresh state.

    ``base_lr`` defaults to ``inner.lr``; with ``local_decay`` the rate of
    iteration ``t`` is scaled by ``(T - t) / T``.
    """
    return _iterate(problem, w0, inner, T, base_lr, local_decay, None)[0]


def solve_fixed_point(problem, w0=None, tol=1e-15, max_iter=100_000):
    """Stationary point of the proximal local objective.

    Iterates ``W <- anchor - eta * data_gradient(W)``, which contracts when
    ``eta`` is small relative to the curvature of the local loss.
    """
    if not (problem.eta and problem.eta > 0):
        raise ValueError("fixed point needs a positive eta")
    w = problem.anchor.copy() if w0 is None else np.array(w0, dtype=np.float64)
    for _ in range(max_iter):
        new = problem.anchor - problem.eta * data_gradient(problem, w)
        if not np.all(np.isfinite(new)):
            raise NumericError(f"layer {problem.layer}: fixed-point iteration diverged")
        change = np.max(np.abs(new - w))
        w = new
        if change <= tol * max(1.0, np.max(np.abs(w))):
            return w
    raise NumericError(f"layer {problem.layer}: fixed point did not converge")


def locoprop_train_step(
    layers,
    x,
    y,
    loss,
    variant,
    gamma,
    inner,
    T,
    base_lr=None,
    local_decay=True,
    eta=None,
    proximal=False,
    executor=None,
    order=None,
    states=None,
):
    """One outer step: forward, backward, targets, then independent layer updates.

    Every layer starts from the same pre-step caches, so the result does not
    depend on ``order`` or on how ``executor`` schedules the layers. Pass
    ``states`` (a list, updated in place) to carry inner-optimizer state
    across outer steps; by default each step starts fresh.
    Returns the updated list of layers.
    """
    caches = backward(layers, forward(layers, x), loss, y)
    targets = compute_targets(variant, caches, gamma)
    problems = local_problems(layers, caches, targets, eta, proximal)

    def solve(m):
        state = states[m] if states is not None else None
        w, state = _iterate(problems[m], layers[m].weights, inner, T, base_lr, local_decay, state)
        return w, state

    order = list(range(len(layers))) if order is None else list(order)
    if sorted(order) != list(range(len(layers))):
        raise ValueError("order must be a permutation of the layer indices")
    if executor is None:
        results = {m: solve(m) for m in order}
    else:
        futures = {m: executor.submit(solve, m) for m in order}
        results = {m: f.result() for m, f in futures.items()}

    if states is not None:
        for m in range(len(layers)):
            states[m] = results[m][1]
    return [Layer(results[m][0], layer.transfer) for m, layer in enumerate(layers)]


def worker_pool(workers):
    """Thread pool for per-layer updates, or ``None`` for sequential mode."""
    if not workers or workers <= 1:
        return None
    return ThreadPoolExecutor(max_workers=workers)
