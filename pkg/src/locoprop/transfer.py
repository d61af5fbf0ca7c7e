"""Transfer functions, their convex integrals, and induced matching losses.

Every function accepts either a vector of shape ``(d,)`` or a batch of
column vectors of shape ``(d, b)``. Softmax normalizes along axis 0; all
other kinds act elementwise. Reductions (``integral``, ``bregman``, ...)
sum over axis 0, so a vector yields a float and a batch yields ``(b,)``.

Derivatives at kink points (Step, ReLU, leaky ReLU, ELU at 0) use the right
derivative.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, xlogy

from .errors import NotInvertibleError, NumericError

STEP = "step"
LINEAR = "linear"
LEAKY_RELU = "leaky_relu"
SIGMOID = "sigmoid"
SOFTMAX = "softmax"
TANH = "tanh"
ARCTAN = "arctan"
SOFTPLUS = "softplus"
ELU = "elu"

KINDS = (STEP, LINEAR, LEAKY_RELU, SIGMOID, SOFTMAX, TANH, ARCTAN, SOFTPLUS, ELU)
_PARAMETERIZED = (LEAKY_RELU, ELU)
_ALIASES = {"relu": (LEAKY_RELU, 0.0), "identity": (LINEAR, 0.0)}


@dataclass(frozen=True)
class TransferKind:
    """A transfer function ``f`` with optional slope parameter ``beta``."""

    name: str
    beta: float = 0.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown transfer kind {self.name!r}")
        if self.beta < 0 or not np.isfinite(self.beta):
            raise ValueError("beta must be a finite nonnegative number")
        if self.name not in _PARAMETERIZED and self.beta != 0.0:
            raise ValueError(f"{self.name} takes no beta parameter")

    @classmethod
    def parse(cls, text):
        """Parse ``"tanh"``, ``"relu"``, ``"leaky_relu:0.1"``, ``"elu:1"``."""
        name, _, param = text.strip().lower().partition(":")
        name = name.replace("-", "_")
        if name in _ALIASES:
            name, beta = _ALIASES[name]
        else:
            beta = 1.0 if name == ELU else 0.0
        if param:
            beta = float(param)
        return cls(name, beta)

    @property
    def elementwise(self):
        return self.name != SOFTMAX

    @property
    def strictly_increasing(self):
        if self.name in (LINEAR, SIGMOID, TANH, ARCTAN, SOFTPLUS):
            return True
        return self.name in _PARAMETERIZED and self.beta > 0

    @property
    def invertible(self):
        return self.strictly_increasing or self.name == SOFTMAX

    def __str__(self):
        if self.name in _PARAMETERIZED:
            return f"{self.name}:{self.beta:g}"
        return self.name


def _vec(a, name="input"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim not in (1, 2) or a.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty vector or matrix")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def _softplus(a):
    return np.logaddexp(0.0, a)


def _log_cosh(a):
    x = np.abs(a)
    return x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0)


def _sech2(a):
    e = np.exp(-2.0 * np.abs(a))
    return 4.0 * e / (1.0 + e) ** 2


def softmax(a):
    z = a - np.max(a, axis=0, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=0, keepdims=True)


# -- dilogarithm ------------------------------------------------------------

_SERIES_K = np.arange(1, 61, dtype=np.float64)


def _li2_series(z):
    """Power series of Li2 for 0 <= z <= 1/2."""
    z = np.asarray(z, dtype=np.float64)
    powers = z[..., None] ** _SERIES_K
    return np.sum(powers / _SERIES_K**2, axis=-1)


def li2_neg_exp(a):
    """``Li2(-exp(a))`` evaluated without forming ``exp(a)``.

    Uses the inversion identity to map ``a > 0`` onto ``a <= 0`` and the
    Landen identity to map ``-exp(a)`` in [-1, 0) into the series region.
    """
    a = np.asarray(a, dtype=np.float64)
    x = -np.abs(a)
    base = -_li2_series(expit(x)) - 0.5 * _softplus(x) ** 2
    flipped = -np.pi**2 / 6.0 - 0.5 * a**2 - base
    return np.where(a > 0, flipped, base)


def dilog(x):
    """Real dilogarithm ``Li2(x)`` for ``x <= 1``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x > 1):
        raise ValueError("dilog is real only for x <= 1")
    out = np.empty_like(x)
    neg = x < 0
    with np.errstate(divide="ignore"):
        out[neg] = li2_neg_exp(np.log(-x[neg]))
    low = (x >= 0) & (x <= 0.5)
    out[low] = _li2_series(x[low])
    high = x > 0.5
    xh = x[high]
    with np.errstate(divide="ignore", invalid="ignore"):
        refl = np.pi**2 / 6.0 - np.log(xh) * np.log1p(-xh) - _li2_series(1.0 - xh)
    out[high] = np.where(xh == 1.0, np.pi**2 / 6.0, refl)
    return out


# -- forward map ------------------------------------------------------------


def apply(kind, a):
    a = _vec(a)
    name, beta = kind.name, kind.beta
    if name == STEP:
        return 0.5 * (1.0 + np.sign(a))
    if name == LINEAR:
        return a.copy()
    if name == LEAKY_RELU:
        return np.maximum(a, 0.0) - beta * np.maximum(-a, 0.0)
    if name == SIGMOID:
        return expit(a)
    if name == SOFTMAX:
        return softmax(a)
    if name == TANH:
        return np.tanh(a)
    if name == ARCTAN:
        return np.arctan(a)
    if name == SOFTPLUS:
        return _softplus(a)
    return np.where(a >= 0, a, beta * np.expm1(np.minimum(a, 0.0)))


def _integral_terms(kind, a):
    name, beta = kind.name, kind.beta
    if name == STEP:
        return np.maximum(a, 0.0)
    if name == LINEAR:
        return 0.5 * a * a
    if name == LEAKY_RELU:
        return 0.5 * a * (np.maximum(a, 0.0) - beta * np.maximum(-a, 0.0))
    if name == SIGMOID:
        return _softplus(a)
    if name == TANH:
        return _log_cosh(a)
    if name == ARCTAN:
        return a * np.arctan(a) - 0.5 * np.log1p(a * a)
    if name == SOFTPLUS:
        return -li2_neg_exp(a)
    neg = np.minimum(a, 0.0)
    return np.where(a >= 0, 0.5 * a * a, beta * (np.expm1(neg) - neg))


def integral(kind, a):
    """Convex integral ``F`` with ``grad F = f``, summed over axis 0."""
    a = _vec(a)
    if kind.name == SOFTMAX:
        out = logsumexp(a, axis=0)
    else:
        out = np.sum(_integral_terms(kind, a), axis=0)
    return float(out) if a.ndim == 1 else out


def conjugate(kind, y):
    """Fenchel dual ``F*`` in closed form, summed over axis 0.

    Points outside the closure of the transfer's range map to ``+inf``.
    For Softmax this is the negative entropy, exact on the simplex.
    """
    y = _vec(y, "y")
    name, beta = kind.name, kind.beta
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        if name == STEP:
            t = np.where((y >= 0) & (y <= 1), 0.0, inf)
        elif name == LINEAR:
            t = 0.5 * y * y
        elif name == LEAKY_RELU:
            neg = y * y / (2.0 * beta) if beta > 0 else np.where(y < 0, inf, 0.0)
            t = np.where(y >= 0, 0.5 * y * y, neg)
        elif name == SIGMOID:
            ok = (y >= 0) & (y <= 1)
            t = np.where(ok, xlogy(y, y) + xlogy(1 - y, 1 - y), inf)
        elif name == SOFTMAX:
            t = np.where(y >= 0, xlogy(y, y), inf)
        elif name == TANH:
            ok = np.abs(y) <= 1
            t = np.where(ok, 0.5 * (xlogy(1 + y, 1 + y) + xlogy(1 - y, 1 - y)), inf)
        elif name == ARCTAN:
            ok = np.abs(y) < np.pi / 2
            t = np.where(ok, -np.log(np.cos(np.where(ok, y, 0.0))), inf)
        elif name == SOFTPLUS:
            pos = np.where(y > 0, y, 1.0)
            a = _softplus_inverse(pos)
            t = np.where(y > 0, pos * a + li2_neg_exp(a), np.where(y == 0, 0.0, inf))
        else:
            if beta > 0:
                r = np.where(y > -beta, y / beta, 0.0)
                neg = np.where(y > -beta, (y + beta) * np.log1p(r) - y, inf)
            else:
                neg = np.where(y < 0, inf, 0.0)
            t = np.where(y >= 0, 0.5 * y * y, neg)
    out = np.sum(t, axis=0)
    return float(out) if y.ndim == 1 else out


# -- inverse ----------------------------------------------------------------


def _softplus_inverse(y):
    # log(exp(y) - 1) without overflow for large y
    return np.where(y > 30.0, y + np.log1p(-np.exp(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


def inverse(kind, y):
    """Target pre-activation ``a = f^{-1}(y)``.

    Softmax is inverted up to its constant-shift gauge using the
    mean-log-centered representative.
    """
    y = _vec(y, "y")
    name, beta = kind.name, kind.beta
    if not kind.invertible:
        raise NotInvertibleError(f"{kind} has no unique inverse")

    def require(ok, what):
        if not np.all(ok):
            raise NotInvertibleError(f"{kind}: y outside the open range {what}")

    if name == LINEAR:
        return y.copy()
    if name == LEAKY_RELU:
        return np.where(y >= 0, y, y / beta)
    if name == SIGMOID:
        require((y > 0) & (y < 1), "(0, 1)")
        return np.log(y) - np.log1p(-y)
    if name == SOFTMAX:
        require(y > 0, "of positive vectors")
        sums = np.sum(y, axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-10):
            raise NotInvertibleError("softmax inverse needs columns summing to 1")
        logs = np.log(y)
        return logs - np.mean(logs, axis=0, keepdims=True)
    if name == TANH:
        require(np.abs(y) < 1, "(-1, 1)")
        return np.arctanh(y)
    if name == ARCTAN:
        require(np.abs(y) < np.pi / 2, "(-pi/2, pi/2)")
        return np.tan(y)
    if name == SOFTPLUS:
        require(y > 0, "(0, inf)")
        return _softplus_inverse(y)
    require(y > -beta, f"(-{beta:g}, inf)")
    return np.where(y >= 0, y, np.log1p(np.minimum(y, 0.0) / beta))


# -- derivatives ------------------------------------------------------------


def derivative(kind, a):
    """Elementwise ``f'(a)``; the diagonal of the Jacobian."""
    a = _vec(a)
    name, beta = kind.name, kind.beta
    if name == SOFTMAX:
        raise ValueError("softmax has a non-diagonal Jacobian; use jacobian_vector")
    if name == STEP:
        return np.zeros_like(a)
    if name == LINEAR:
        return np.ones_like(a)
    if name == LEAKY_RELU:
        return np.where(a >= 0, 1.0, beta)
    if name == SIGMOID:
        s = expit(a)
        return s * (1.0 - s)
    if name == TANH:
        return _sech2(a)
    if name == ARCTAN:
        return 1.0 / (1.0 + a * a)
    if name == SOFTPLUS:
        return expit(a)
    return np.where(a >= 0, 1.0, beta * np.exp(np.minimum(a, 0.0)))


def jacobian(kind, a):
    """Jacobian of ``f`` at the vector ``a`` (also the Hessian of ``F``)."""
    a = _vec(a)
    if a.ndim != 1:
        raise ValueError("jacobian expects a single vector")
    if kind.name == SOFTMAX:
        s = softmax(a)
        return np.diag(s) - np.outer(s, s)
    return np.diag(derivative(kind, a))


def jacobian_vector(kind, a, v):
    """``J_f(a) @ v`` columnwise. The Jacobian is symmetric for every kind."""
    a = _vec(a)
    v = _vec(v, "v")
    if a.shape != v.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {v.shape}")
    if kind.name == SOFTMAX:
        s = softmax(a)
        return s * (v - np.sum(s * v, axis=0, keepdims=True))
    return derivative(kind, a) * v


# -- matching losses --------------------------------------------------------


def bregman(kind, a_hat, a):
    """``D_F(a_hat, a) = F(a_hat) - F(a) - f(a).(a_hat - a)``."""
    a_hat = _vec(a_hat, "a_hat")
    a = _vec(a, "a")
    if a_hat.shape != a.shape:
        raise ValueError(f"shape mismatch {a_hat.shape} vs {a.shape}")
    if kind.name == SOFTMAX:
        out = (
            logsumexp(a_hat, axis=0)
            - logsumexp(a, axis=0)
            - np.sum(softmax(a) * (a_hat - a), axis=0)
        )
    elif kind.name == LINEAR:
        out = 0.5 * np.sum((a_hat - a) ** 2, axis=0)
    else:
        terms = (
            _integral_terms(kind, a_hat)
            - _integral_terms(kind, a)
            - apply(kind, a) * (a_hat - a)
        )
        out = np.sum(terms, axis=0)
    return float(out) if a.ndim == 1 else out


def bregman_grad(kind, a_hat, a):
    """Gradient of ``bregman`` in its first argument: ``f(a_hat) - f(a)``."""
    a_hat = _vec(a_hat, "a_hat")
    a = _vec(a, "a")
    if a_hat.shape != a.shape:
        raise ValueError(f"shape mismatch {a_hat.shape} vs {a.shape}")
    return apply(kind, a_hat) - apply(kind, a)


def matching_loss(kind, a_hat, y):
    """Matching loss between post-activation target ``y`` and ``f(a_hat)``.

    Equals ``D_F(a_hat, f^{-1}(y))`` but is evaluated through the dual,
    ``F(a_hat) - y.a_hat + F*(y)``, so no inverse is needed.
    """
    a_hat = _vec(a_hat, "a_hat")
    y = _vec(y, "y")
    if a_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {a_hat.shape} vs {y.shape}")
    if kind.name == LINEAR:
        out = 0.5 * np.sum((a_hat - y) ** 2, axis=0)
        return float(out) if y.ndim == 1 else out
    return integral(kind, a_hat) - np.sum(y * a_hat, axis=0) + conjugate(kind, y)
