"""
Shannon and Tsallis entropy of router distributions, their exact gradients
and the normalised Tsallis entropy used for routing decisions.

All logarithms are natural. 0*log(0) and 0**q are taken as 0.
"""
import logging

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

# Tolerances
PROB_SUM_TOL = 1e-9
Q_ONE_TOL = 1e-9


def check_distribution(p) -> np.ndarray:
    """
    Validate a probability vector

    Returns:
        float64 copy of ``p``

    Raises:
        DomainError: empty, negative, non-finite or not summing to 1
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"distribution must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("distribution has non-finite entries")
    if np.any(arr < 0):
        raise DomainError("distribution has negative entries")
    total = float(np.sum(arr))
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise DomainError(f"distribution sums to {total!r}, not 1")
    return arr


def check_entropic_index(q: float) -> float:
    q = float(q)
    if not np.isfinite(q) or q <= 0:
        raise DomainError(f"entropic index must be positive, got {q}")
    return q


def is_shannon(q: float) -> bool:
    """q close enough to 1 that the Tsallis closed form is replaced by Shannon"""
    return abs(q - 1.0) <= Q_ONE_TOL


def shannon_entropy(p, *, validate: bool = True) -> float:
    """H(p) = -sum p_i log p_i, in nats"""
    p = check_distribution(p) if validate else np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return max(float(-np.sum(nz * np.log(nz))), 0.0)


def tsallis_entropy(p, q: float, *, validate: bool = True) -> float:
    """
    S_q(p) = (1 - sum p_i^q) / (q - 1)

    For q within 1e-9 of 1 this is the Shannon entropy (the q -> 1 limit).
    ``validate=False`` skips the simplex check so the formula can be
    differentiated numerically off the simplex.
    """
    q = check_entropic_index(q)
    p = check_distribution(p) if validate else np.asarray(p, dtype=np.float64)
    if is_shannon(q):
        return shannon_entropy(p, validate=False)
    value = (1.0 - float(np.sum(np.power(p, q)))) / (q - 1.0)
    return max(value, 0.0) if validate else value


def tsallis_max(n: int, q: float) -> float:
    """Tsallis entropy of the uniform distribution over n outcomes"""
    if n < 1:
        raise DomainError(f"need at least one outcome, got n={n}")
    q = check_entropic_index(q)
    if is_shannon(q):
        return float(np.log(n))
    return (1.0 - float(n) ** (1.0 - q)) / (q - 1.0)


def normalized_tsallis(p, q: float) -> float:
    """
    S_q(p) / S_q(uniform) in [0, 1]

    0 at a one-hot distribution, 1 at the uniform one.
    """
    p = check_distribution(p)
    if p.size < 2:
        raise DomainError("normalised entropy needs at least two experts")
    value = tsallis_entropy(p, q, validate=False) / tsallis_max(p.size, q)
    return min(max(value, 0.0), 1.0)


def tsallis_grad(p, q: float) -> np.ndarray:
    """
    Exact partial derivatives dS_q/dp_i = -(q / (q - 1)) * p_i^(q - 1)

    For q > 1 every component is bounded by q / (q - 1) in magnitude and
    vanishes as p_i -> 0.
    """
    q = check_entropic_index(q)
    if is_shannon(q):
        raise DomainError("tsallis_grad needs q != 1; use shannon_grad")
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        grad = -(q / (q - 1.0)) * np.power(p, q - 1.0)
    if not np.all(np.isfinite(grad)):
        raise DomainError(f"gradient diverges at zero probability for q={q} < 1")
    return grad


def shannon_grad(p) -> np.ndarray:
    """dH/dp_i = -(1 + log p_i); unbounded as p_i -> 0"""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise DomainError("shannon gradient diverges at zero probability")
    return -(1.0 + np.log(p))


def entropy(p, q: float, *, validate: bool = True) -> float:
    """Tsallis entropy, dispatching to Shannon at q == 1"""
    return tsallis_entropy(p, q, validate=validate)


def entropy_grad(p, q: float) -> np.ndarray:
    """Gradient of ``entropy`` w.r.t. p, dispatching to Shannon at q == 1"""
    if is_shannon(check_entropic_index(q)):
        return shannon_grad(p)
    return tsallis_grad(p, q)
