"""Feedforward network: forward pass, final losses, and backward pass.

Activations are stored column-major: a batch of ``b`` examples with ``d``
features is a ``(d, b)`` array. Biases live in the last weight column and
every layer input carries an extra row of ones.

Losses and gradients are means over the batch.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import xlogy

from . import transfer as tf
from .errors import NumericError, ShapeError, StateError
from .numerics import check_finite


class FinalLoss(str, enum.Enum):
    SQUARED = "squared"
    SIGMOID_CE = "sigmoid_ce"
    SOFTMAX_KL = "softmax_kl"

    @property
    def matching_transfer(self):
        """The transfer whose matching loss this is."""
        return _MATCHING[self]


_MATCHING = {
    FinalLoss.SQUARED: tf.TransferKind(tf.LINEAR),
    FinalLoss.SIGMOID_CE: tf.TransferKind(tf.SIGMOID),
    FinalLoss.SOFTMAX_KL: tf.TransferKind(tf.SOFTMAX),
}


@dataclass
class Layer:
    weights: np.ndarray  # (d_out, d_in + 1); last column is the bias
    transfer: tf.TransferKind

    @property
    def d_in(self):
        return self.weights.shape[1] - 1

    @property
    def d_out(self):
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class LayerCache:
    input: np.ndarray  # augmented input, (d_in + 1, b)
    pre_act: np.ndarray
    post_act: np.ndarray
    pre_grad: np.ndarray = None
    post_grad: np.ndarray = None

    @property
    def batch_size(self):
        return self.input.shape[1]


def augment(y):
    return np.vstack([y, np.ones((1, y.shape[1]))])


def glorot_layers(widths, transfers, rng):
    """Layers with weights uniform on +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    if len(transfers) != len(widths) - 1:
        raise ValueError("need one transfer per layer")
    layers = []
    for d_in, d_out, kind in zip(widths[:-1], widths[1:], transfers):
        bound = np.sqrt(6.0 / (d_in + d_out))
        w = np.zeros((d_out, d_in + 1))
        w[:, :d_in] = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(Layer(w, kind))
    return layers


def copy_layers(layers):
    return [Layer(layer.weights.copy(), layer.transfer) for layer in layers]


def forward(layers, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"input batch must be (features, batch), got {x.shape}")
    caches = []
    y = x
    for m, layer in enumerate(layers):
        if layer.d_in != y.shape[0]:
            raise ShapeError(
                f"layer {m} expects {layer.d_in} inputs, got {y.shape[0]}"
            )
        inp = augment(y)
        pre = layer.weights @ inp
        y = tf.apply(layer.transfer, pre)
        caches.append(LayerCache(inp, pre, y))
    return caches


def predict(layers, x):
    return forward(layers, x)[-1].post_act


def final_loss(loss, y, yhat, pre_act=None):
    """Batch-mean final loss.

    When the output pre-activation is supplied for the cross-entropy losses
    the log-probabilities are taken from it, which stays finite when the
    outputs saturate.
    """
    loss = FinalLoss(loss)
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 2:
        raise ShapeError(f"shape mismatch {y.shape} vs {yhat.shape}")
    b = y.shape[1]
    if loss is FinalLoss.SQUARED:
        total = 0.5 * np.sum((yhat - y) ** 2)
    elif loss is FinalLoss.SIGMOID_CE:
        if np.any((y < 0) | (y > 1)):
            raise NumericError("sigmoid cross-entropy needs targets in [0, 1]")
        if pre_act is not None:
            kind = _MATCHING[loss]
            total = np.sum(tf.matching_loss(kind, pre_act, y))
        else:
            if np.any((yhat <= 0) | (yhat >= 1)):
                raise NumericError("sigmoid outputs must lie in (0, 1)")
            total = np.sum(
                xlogy(y, y) + xlogy(1 - y, 1 - y)
                - xlogy(y, yhat) - xlogy(1 - y, 1 - yhat)
            )
    else:
        if np.any(y < 0):
            raise NumericError("KL targets must be nonnegative")
        if pre_act is not None:
            shifted = pre_act - np.max(pre_act, axis=0, keepdims=True)
            log_yhat = shifted - np.log(np.sum(np.exp(shifted), axis=0, keepdims=True))
            total = np.sum(xlogy(y, y) - y * log_yhat - y + yhat)
        else:
            if np.any(yhat <= 0):
                raise NumericError("KL predictions must be positive")
            total = np.sum(xlogy(y, y) - xlogy(y, yhat) - y + yhat)
    if not np.isfinite(total):
        raise NumericError("final loss is not finite")
    return float(total) / b


def output_grads(loss, kind, y, yhat, pre_act):
    """Return ``(d L / d yhat, d L / d pre_act)`` for the output layer."""
    loss = FinalLoss(loss)
    b = y.shape[1]
    if loss is FinalLoss.SQUARED:
        post = (yhat - y) / b
    elif loss is FinalLoss.SIGMOID_CE:
        post = (yhat - y) / (yhat * (1.0 - yhat)) / b
    else:
        post = (1.0 - y / yhat) / b
    if kind == _MATCHING[loss]:
        # closed form of the chain rule for a matching pair, no division by f'
        pre = yhat - y
        if loss is FinalLoss.SOFTMAX_KL:
            pre = pre + yhat * (np.sum(y, axis=0, keepdims=True) - 1.0)
        pre = pre / b
    else:
        pre = tf.jacobian_vector(kind, pre_act, post)
    return post, pre


def backward(layers, caches, loss, y):
    """Fill ``pre_grad`` and ``post_grad`` of every cache."""
    if len(caches) != len(layers):
        raise StateError("caches do not match the network")
    y = np.asarray(y, dtype=np.float64)
    last = caches[-1]
    if y.shape != last.post_act.shape:
        raise ShapeError(f"targets {y.shape} do not match outputs {last.post_act.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        post, pre = output_grads(loss, layers[-1].transfer, y, last.post_act, last.pre_act)
    out = [None] * len(layers)
    for m in range(len(layers) - 1, -1, -1):
        cache = caches[m]
        check_finite(pre, f"layer {m} pre-activation gradient")
        out[m] = replace(cache, pre_grad=pre, post_grad=post)
        if m > 0:
            post = layers[m].weights[:, :-1].T @ pre
            pre = tf.jacobian_vector(layers[m - 1].transfer, caches[m - 1].pre_act, post)
    return out


def weight_grads(caches):
    """``dL/dW_m = pre_grad_m @ input_m.T`` for each layer."""
    if any(c.pre_grad is None for c in caches):
        raise StateError("run backward before requesting weight gradients")
    return [c.pre_grad @ c.input.T for c in caches]


def loss_and_grads(layers, x, y, loss):
    caches = forward(layers, x)
    value = final_loss(loss, y, caches[-1].post_act, caches[-1].pre_act)
    caches = backward(layers, caches, loss, y)
    return value, weight_grads(caches), caches
