"""
Dense float64 helpers every other module builds on: validated shapes,
overflow-safe softmax, central finite differences and the seeded generator
"""
import logging
from typing import Callable

import numpy as np

from errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

# PCG64 streams are identical across platforms for a given seed
RNG_ALGORITHM = "PCG64"


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    return arr


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (row-major)"""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    """
    Matrix product of two 2-D operands

    Raises:
        ShapeError: when a.cols != b.rows
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix product overflowed")
    return out


def matvec(m: np.ndarray, x: np.ndarray, name: str = "input") -> np.ndarray:
    """m @ x with a shape check that names the offending operand"""
    if m.shape[1] != x.shape[0]:
        raise ShapeError(f"{name} has length {x.shape[0]}, expected {m.shape[1]}")
    return m @ x


def softmax(z) -> np.ndarray:
    """
    Softmax with max-subtraction

    Returns:
        Strictly positive vector summing to 1
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input has non-finite entries")
    shifted = np.exp(z - np.max(z))
    return shifted / np.sum(shifted)


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax: gradient w.r.t. the logits"""
    return probs * (d_probs - np.dot(probs, d_probs))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient of a scalar function

    Args:
        f: scalar function of a 1-D array
        x: evaluation point
        eps: step, must be positive

    Returns:
        (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) for every coordinate i
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        f_plus = f(x)
        flat[i] = original - eps
        f_minus = f(x)
        flat[i] = original

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"function is not finite around coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)

    return grad.reshape(x.shape)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Seeded PCG64 generator; equal seeds reproduce equal draw sequences

    ``stream`` selects an independent, non-overlapping substream of the same
    seed (the generator state jumped ``stream`` times).
    """
    if not 0 <= int(seed) < 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    bit_generator = np.random.PCG64(int(seed))
    if stream:
        bit_generator = bit_generator.jumped(stream)
    return np.random.Generator(bit_generator)


def scaled_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> np.ndarray:
    """
    Elementwise |a - n| / max(|a|, |n|, floor)

    Relative for entries larger than ``floor`` and absolute below it, so
    gradients that are exactly zero do not divide by round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale
