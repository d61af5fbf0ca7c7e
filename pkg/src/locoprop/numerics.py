"""Dense linear-algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function
validates shapes and finiteness of its result so that errors surface where
they originate rather than several layers downstream.
"""

import numpy as np

from .errors import NumericError, ShapeError

SYMMETRY_TOL = 1e-10


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(x, name="value"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    return x


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "product")


def _symmetric_part(m, name):
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise NumericError(f"{name} must be square, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise NumericError(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def spd_inverse(m, damping=0.0):
    """Inverse of ``m + damping * I`` for a symmetric PSD ``m``.

    Factorizes with Cholesky after projecting onto the symmetric part;
    raises :class:`NumericError` if the damped matrix is not positive
    definite.
    """
    if damping < 0:
        raise NumericError("damping must be nonnegative")
    s = _symmetric_part(m, "m")
    n = s.shape[0]
    try:
        chol = np.linalg.cholesky(s + damping * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericError("matrix is not positive definite") from exc
    linv = np.linalg.solve(chol, np.eye(n))
    inv = linv.T @ linv
    return check_finite(0.5 * (inv + inv.T), "inverse")


def solve_sylvester(h_inv, gram, rhs, eta):
    """Solve ``h_inv @ X + eta * X @ gram = rhs`` for ``X``.

    Builds the vectorized system ``(I kron h_inv + eta * gram kron I)``
    explicitly (column-major vec), so it is only meant for small problems.
    """
    h_inv = as_matrix(h_inv, "h_inv")
    gram = as_matrix(gram, "gram")
    rhs = as_matrix(rhs, "rhs")
    d, n = rhs.shape
    if h_inv.shape != (d, d) or gram.shape != (n, n):
        raise ShapeError(
            f"expected h_inv {(d, d)} and gram {(n, n)}, "
            f"got {h_inv.shape} and {gram.shape}"
        )
    if eta <= 0:
        raise NumericError("eta must be positive")
    system = np.kron(np.eye(n), h_inv) + eta * np.kron(gram.T, np.eye(d))
    if np.linalg.cond(system) > 1.0 / np.finfo(np.float64).eps:
        raise NumericError("Sylvester system is singular")
    try:
        vec = np.linalg.solve(system, rhs.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericError("Sylvester system is singular") from exc
    return check_finite(vec.reshape((d, n), order="F"), "solution")
