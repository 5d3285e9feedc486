"""
Task loss and the auxiliary router objective

    L_entropy = beta * mean_t S_q(G(x_t))
    L_balance = alpha * N * sum_i f_i P_i
    L_aux     = L_balance + L_entropy

f_i counts activations: a token contributes once to every expert it was
routed to, normalised by the total number of activations in the batch.
P_i is the batch mean of the full router distribution.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from errors import ShapeError, UsageError
from models import LossConfig
from services.entropy import entropy, entropy_grad
from services.numerics import as_vector, softmax, softmax_backward
from services.routing import RouterDecision

logger = logging.getLogger(__name__)


@dataclass
class BatchRoutingStats:
    """Routing outcome of a batch of T tokens"""

    decisions: List[RouterDecision]
    logits: np.ndarray  # (T, N) router logits, kept for gradients
    mask: np.ndarray    # (T, N) True where the token was dispatched to the expert

    @property
    def n_tokens(self) -> int:
        return self.logits.shape[0]

    @property
    def n_experts(self) -> int:
        return self.logits.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return np.vstack([softmax(row) for row in self.logits])

    @property
    def dispatch_fraction(self) -> np.ndarray:
        """f_i"""
        counts = self.mask.sum(axis=0).astype(np.float64)
        return counts / counts.sum()

    @property
    def mean_prob(self) -> np.ndarray:
        """P_i"""
        return self.probs.mean(axis=0)


def collect_stats(decisions: Sequence[RouterDecision], logits) -> BatchRoutingStats:
    """
    Build batch statistics from per-token decisions and their logits

    The selection masks come from ``decisions``; probabilities are recomputed
    from ``logits`` so gradients can be checked by perturbing the logits with
    the selections held fixed.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if len(decisions) == 0:
        raise UsageError("batch statistics need at least one token")
    if logits.shape[0] != len(decisions):
        raise ShapeError(f"{len(decisions)} decisions but {logits.shape[0]} logit rows")

    mask = np.vstack([d.mask() for d in decisions])
    if mask.shape != logits.shape:
        raise ShapeError(f"selection mask {mask.shape} does not match logits {logits.shape}")

    return BatchRoutingStats(decisions=list(decisions), logits=logits, mask=mask)


def _check_n(stats: BatchRoutingStats, n: int):
    if n != stats.n_experts:
        raise ShapeError(f"stats cover {stats.n_experts} experts, expected {n}")


def entropy_loss(stats: BatchRoutingStats, cfg: LossConfig) -> float:
    """beta * mean token Tsallis entropy (unnormalised)"""
    if cfg.beta == 0:
        return 0.0
    values = [entropy(p, cfg.q) for p in stats.probs]
    return cfg.entropy_sign * cfg.beta * float(np.mean(values))


def load_balance_loss(stats: BatchRoutingStats, cfg: LossConfig, n: int) -> float:
    """alpha * N * sum_i f_i P_i"""
    _check_n(stats, n)
    if cfg.alpha == 0:
        return 0.0
    return cfg.alpha * n * float(np.dot(stats.dispatch_fraction, stats.mean_prob))


def auxiliary_loss(stats: BatchRoutingStats, cfg: LossConfig, n: int) -> float:
    return load_balance_loss(stats, cfg, n) + entropy_loss(stats, cfg)


def task_loss(y, y_target) -> Tuple[float, np.ndarray]:
    """
    Half squared error

    Returns:
        (0.5 * ||y - y*||^2, y - y*)
    """
    y = as_vector(y, "y")
    y_target = as_vector(y_target, "target")
    if y.shape != y_target.shape:
        raise ShapeError(f"prediction has length {y.shape[0]}, target {y_target.shape[0]}")
    diff = y - y_target
    return 0.5 * float(diff @ diff), diff


def _entropy_grad_on_support(p: np.ndarray, q: float) -> np.ndarray:
    """dS/dp on the entries with p > 0, zero elsewhere"""
    support = p > 0
    d_probs = np.zeros_like(p)
    d_probs[support] = entropy_grad(p[support], q)
    return d_probs


def aux_loss_grads(stats: BatchRoutingStats, cfg: LossConfig, n: int) -> np.ndarray:
    """
    Gradient of the auxiliary loss w.r.t. every token's router logits

    Dispatch fractions are constants (they come from the discrete selection).
    Entries whose probability underflowed to 0 get a zero logit gradient:
    the softmax Jacobian row vanishes there even when dS/dp does not.

    Returns:
        (T, N) array
    """
    _check_n(stats, n)
    probs = stats.probs
    t = stats.n_tokens
    grads = np.zeros_like(probs)

    d_balance = (cfg.alpha * n / t) * stats.dispatch_fraction if cfg.alpha else np.zeros(n)
    for row in range(t):
        d_probs = d_balance.copy()
        if cfg.beta:
            d_probs += (cfg.entropy_sign * cfg.beta / t) * _entropy_grad_on_support(probs[row], cfg.q)
        grads[row] = softmax_backward(probs[row], d_probs)

    return grads
