"""Dense float64 kernels used throughout the package.

Matrices and vectors are plain ``numpy.ndarray`` objects with ``dtype=float64``
(C-contiguous, row-major). The helpers here add the shape checks and the
numerically stable softmax the rest of the code relies on.

Random numbers come from ``numpy.random.Generator`` backed by ``PCG64``
(O'Neill's permuted congruential generator, 128-bit state, 64-bit output).
``make_rng(seed)`` is the only sanctioned way to build one, so that a given
seed yields the same stream on every platform running the same numpy
bit-generator version.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray

MAX_SEED = 2**64 - 1


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator for a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ParameterError(f"seed must be in [0, 2**64), got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a, name: str = "matrix") -> Matrix:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def as_vector(x, name: str = "vector") -> Vector:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def check_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name}")
    return a


def matmul(a, b) -> Matrix:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or not np.isfinite(tau):
        raise ParameterError(f"temperature must be a positive finite number, got {tau}")
    return tau


def softmax_stable(x, tau: float = 1.0) -> Vector:
    """Softmax of ``x / tau`` with the maximum subtracted before exponentiation."""
    tau = _check_tau(tau)
    x = as_vector(x, "softmax input")
    if x.size == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp((x - x.max()) / tau)
    return e / e.sum()


def softmax_axis(x: np.ndarray, tau: float, axis: int = -1) -> np.ndarray:
    """Stable softmax of ``x / tau`` along one axis of an array of any rank."""
    tau = _check_tau(tau)
    e = np.exp((x - x.max(axis=axis, keepdims=True)) / tau)
    return e / e.sum(axis=axis, keepdims=True)


def reduce(x, kind: str) -> float:
    """Arithmetic mean or maximum of a non-empty vector."""
    x = as_vector(x, "reduce input")
    if x.size == 0:
        raise ShapeError("cannot reduce an empty vector")
    if kind == "mean":
        return float(x.mean())
    if kind == "max":
        return float(x.max())
    raise ParameterError(f"unknown reduction {kind!r}; expected 'mean' or 'max'")


def logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(x - m).sum(axis=axis))


def unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize along the last axis; zero vectors stay zero.

    Returns ``(y, norm)`` where ``norm`` keeps a trailing singleton axis so it
    can be fed straight back into ``unit_backward``.
    """
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norm == 0, 1.0, norm)
    return x / safe, safe


def unit_backward(dy: np.ndarray, y: np.ndarray, norm: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of ``unit`` given its outputs."""
    return (dy - y * np.sum(dy * y, axis=-1, keepdims=True)) / norm
