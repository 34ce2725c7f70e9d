"""Dense float64 matrix helpers, stable reductions, deterministic RNG.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64 and
row-major (C) layout; every public operation validates its inputs and
guarantees finite output. The finite-difference gradient here is the
reference oracle used to validate every analytic gradient in the package.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError

__all__ = [
    "as_matrix",
    "as_vector",
    "make_rng",
    "matmul",
    "log_sum_exp",
    "logsumexp_axis",
    "row_softmax",
    "entropy",
    "finite_difference_grad",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, 2-D, C-contiguous float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite, 1-D float64 array."""
    a = np.ascontiguousarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic counter-based generator (Philox).

    Identical seeds give bitwise-identical streams across runs and
    platforms, which the reproducibility guarantees of the training
    harness rely on.
    """
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def matmul(a, b) -> np.ndarray:
    """Matrix product with shape checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul overflowed to non-finite values")
    return out


def log_sum_exp(values) -> float:
    """log(sum(exp(v))) via max-shift; safe for entries up to ~1e300."""
    v = as_vector(values, "values")
    if v.size == 0:
        raise ArgumentError("log_sum_exp of an empty vector")
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def logsumexp_axis(m: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp reduction along one axis of a 2-D array."""
    shift = np.max(m, axis=axis, keepdims=True)
    out = shift + np.log(np.sum(np.exp(m - shift), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def row_softmax(m, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of m / temperature.

    Each output row is nonnegative and sums to 1 within 1e-12; the
    reduction goes through the same max-shift as :func:`log_sum_exp`
    so rows with entries of magnitude up to ~700*temperature are safe.
    """
    if temperature <= 0:
        raise ArgumentError(f"temperature must be > 0, got {temperature}")
    z = as_matrix(m, "m") / temperature
    lse = logsumexp_axis(z, axis=1)
    return np.exp(z - lse[:, None])


def entropy(q) -> float:
    """Shannon entropy -sum(q * log q) with the 0*log(0) := 0 extension."""
    q = as_matrix(q, "q")
    if np.any(q < 0):
        raise ArgumentError("entropy requires nonnegative entries")
    pos = q[q > 0]
    return float(-np.sum(pos * np.log(pos)))


def finite_difference_grad(
    f: Callable[[np.ndarray], float], at, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Perturbs one entry at a time: (f(x + h e_ij) - f(x - h e_ij)) / 2h.
    O(h^2) accurate, O(n) evaluations of f per entry pair; intended for
    validation at toy sizes, not production gradients.
    """
    if step <= 0:
        raise ArgumentError(f"step must be > 0, got {step}")
    x = as_matrix(at, "at").copy()
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + step
            f_plus = f(x)
            x[i, j] = orig - step
            f_minus = f(x)
            x[i, j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"non-finite function value while perturbing entry ({i}, {j})"
                )
            grad[i, j] = (f_plus - f_minus) / (2.0 * step)
    return grad
