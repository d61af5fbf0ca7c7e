"""Closed-form and second-order reference updates.

These are small dense computations used to check the local-loss updates
against their exact counterparts: the implicit (proximal) gradient step,
K-FAC with Kronecker-factored Fisher statistics, natural-gradient targets,
and the linearized Sylvester form of the matching-loss update.

Per-example gradients are recovered from the batch-mean gradients stored in
the layer caches by multiplying with the batch size.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import transfer as tf
from .errors import NumericError, ShapeError
from .local_loss import LocalProblem, Variant, data_gradient, solve_fixed_point
from .network import FinalLoss, backward
from .numerics import as_matrix, matmul, solve_sylvester, spd_inverse


def implicit_update(W, grad_W, Y, eta, gamma):
    """Exact minimizer of the proximal squared local loss.

    Returns ``W - eta * gamma * grad_W @ inv(I + eta * Y Y^T / b)``, where
    ``Y`` holds the layer's (augmented) inputs as columns.
    """
    W = as_matrix(W, "W")
    grad_W = as_matrix(grad_W, "grad_W")
    Y = as_matrix(Y, "Y")
    if grad_W.shape != W.shape or Y.shape[0] != W.shape[1]:
        raise ShapeError("W, grad_W and Y have inconsistent shapes")
    b = Y.shape[1]
    precond = spd_inverse(eta * (Y @ Y.T) / b, 1.0)
    return W - eta * gamma * matmul(grad_W, precond)


@dataclass(frozen=True, eq=False)
class KfacStats:
    D: np.ndarray  # (d_out, d_out), E[g g^T] of per-example pre-activation grads
    X: np.ndarray  # (d_in + 1, d_in + 1), E[y y^T] of layer inputs
    decay: float = 0.95
    damping: float = 1e-3
    count: int = 0

    @classmethod
    def zeros(cls, d_out, d_in_aug, decay=0.95, damping=1e-3):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        if damping <= 0:
            raise ValueError("damping must be positive")
        return cls(np.zeros((d_out, d_out)), np.zeros((d_in_aug, d_in_aug)), decay, damping)


def kfac_update_stats(stats, pre_grads, inputs):
    """Fold one batch into the moving averages.

    The first batch initializes the statistics directly; later batches are
    blended in with weight ``1 - decay``.
    """
    pre_grads = as_matrix(pre_grads, "pre_grads")
    inputs = as_matrix(inputs, "inputs")
    b = inputs.shape[1]
    if pre_grads.shape != (stats.D.shape[0], b) or inputs.shape[0] != stats.X.shape[0]:
        raise ShapeError("gradients or inputs do not match the statistics")
    g = b * pre_grads
    d_batch = g @ g.T / b
    x_batch = inputs @ inputs.T / b
    if stats.count == 0:
        D, X = d_batch, x_batch
    else:
        D = stats.decay * stats.D + (1.0 - stats.decay) * d_batch
        X = stats.decay * stats.X + (1.0 - stats.decay) * x_batch
    return replace(stats, D=0.5 * (D + D.T), X=0.5 * (X + X.T), count=stats.count + 1)


def kfac_step(W, grad_W, stats, lr):
    """``W - lr * inv(D + damping I) @ grad_W @ inv(X + damping I)``."""
    W = as_matrix(W, "W")
    grad_W = as_matrix(grad_W, "grad_W")
    if grad_W.shape != W.shape:
        raise ShapeError("gradient does not match weights")
    left = spd_inverse(stats.D, stats.damping)
    right = spd_inverse(stats.X, stats.damping)
    return W - lr * matmul(matmul(left, grad_W), right)


def ngd_target(pre_act, pre_grad, D, gamma, damping):
    """Pre-activation target from a natural-gradient step.

    ``pre_grad`` is the batch-mean gradient; the step uses the per-example
    gradient ``b * pre_grad`` preconditioned by ``inv(D + damping I)``.
    """
    pre_act = as_matrix(pre_act, "pre_act")
    pre_grad = as_matrix(pre_grad, "pre_grad")
    if pre_grad.shape != pre_act.shape:
        raise ShapeError("pre_grad does not match pre_act")
    b = pre_act.shape[1]
    return pre_act - gamma * matmul(spd_inverse(D, damping), b * pre_grad)


def sampled_pre_grads(layers, caches, loss, rng):
    """Backpropagate gradients for labels drawn from the model's output distribution.

    Bernoulli draws for sigmoid cross-entropy, a categorical draw for softmax
    KL, and unit Gaussian noise around the prediction for squared loss.
    """
    yhat = caches[-1].post_act
    loss = FinalLoss(loss)
    if loss is FinalLoss.SIGMOID_CE:
        y = (rng.random(yhat.shape) < yhat).astype(np.float64)
    elif loss is FinalLoss.SOFTMAX_KL:
        cum = np.cumsum(yhat, axis=0)
        u = rng.random((1, yhat.shape[1])) * cum[-1:]
        idx = np.minimum(np.sum(cum < u, axis=0), yhat.shape[0] - 1)
        y = np.zeros_like(yhat)
        y[idx, np.arange(yhat.shape[1])] = 1.0
    else:
        y = yhat + rng.standard_normal(yhat.shape)
    return [c.pre_grad for c in backward(layers, caches, loss, y)]


@dataclass(frozen=True)
class SylvesterReport:
    delta_linearized: np.ndarray
    delta_exact: np.ndarray
    relative_deviation: float


def verify_sylvester_form(problem, W=None, eta=None):
    """Compare the linearized (Sylvester) matching-loss update with the exact one.

    The linearization solves
    ``inv(H) Delta + eta Delta (Y Y^T / b) = -eta inv(H) R``, where ``H`` is
    the transfer Jacobian at the current pre-activation and ``R`` the local
    gradient at ``W``. The exact update is the fixed point of the proximal
    local objective. Non-linear transfers need a single example so that one
    ``H`` describes the whole batch.
    """
    if problem.variant is not Variant.LOCO_M:
        raise ValueError("the Sylvester form describes the matching-loss variant")
    kind = problem.transfer
    if not kind.strictly_increasing:
        raise NumericError(f"{kind} has a singular Hessian")
    W = problem.anchor if W is None else as_matrix(W, "W")
    eta = problem.eta if eta is None else eta
    if not eta or eta <= 0:
        raise ValueError("eta must be positive")
    problem = LocalProblem(
        problem.layer, problem.inputs, problem.target, kind, problem.variant, W, eta, True
    )
    Y = problem.inputs
    b = Y.shape[1]
    if kind.name == tf.LINEAR:
        h_inv = np.eye(W.shape[0])
    else:
        if b != 1:
            raise ValueError("non-linear transfers need a batch of one example")
        h_inv = spd_inverse(tf.jacobian(kind, (W @ Y)[:, 0]))
    rhs = -eta * matmul(h_inv, data_gradient(problem, W))
    delta_lin = solve_sylvester(h_inv, Y @ Y.T / b, rhs, eta)
    delta_exact = solve_fixed_point(problem) - W
    scale = np.max(np.abs(delta_exact))
    deviation = float(np.max(np.abs(delta_lin - delta_exact)) / scale) if scale else 0.0
    return SylvesterReport(delta_lin, delta_exact, deviation)
