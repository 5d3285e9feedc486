"""
Routing rules over a router distribution: soft, Top-k, Top-p, Top-(p,k)
and the entropy-dispatched hybrid rule.

Selections are returned as tuples of expert indices in ascending order.
Probability ties are broken by ascending expert index.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from errors import ConfigError, DomainError, ShapeError
from models import RoutingConfig, RoutingMode, Strategy
from services.entropy import check_distribution, normalized_tsallis

logger = logging.getLogger(__name__)

# Slack on the cumulative-probability comparison so p = 1.0 terminates
CUMULATIVE_TOL = 1e-12


@dataclass(frozen=True)
class RouterDecision:
    """Outcome of routing one token"""

    strategy: Strategy
    selected: Tuple[int, ...]
    weights: np.ndarray      # length N, zero outside ``selected``, sums to 1
    raw_dist: np.ndarray     # full pre-selection distribution
    entropy_norm: float

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    @property
    def argmax_expert(self) -> int:
        # np.argmax returns the first maximum, i.e. the lowest index on ties
        return int(np.argmax(self.raw_dist))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.raw_dist.shape[0], dtype=bool)
        m[list(self.selected)] = True
        return m


def sort_probs(dist) -> List[Tuple[int, float]]:
    """
    Experts ordered by non-increasing probability

    Returns:
        [(index, prob), ...], ties in ascending index order
    """
    p = check_distribution(dist)
    order = sorted(range(p.size), key=lambda i: (-p[i], i))
    return [(i, float(p[i])) for i in order]


def top_k_select(dist, k: int) -> Tuple[int, ...]:
    """The k most probable experts"""
    p = check_distribution(dist)
    if not 1 <= k <= p.size:
        raise ConfigError(f"k must be in [1, {p.size}], got {k}")
    ranked = sort_probs(p)
    return tuple(sorted(i for i, _ in ranked[:k]))


def top_p_select(dist, p: float) -> Tuple[int, ...]:
    """
    Smallest prefix of the sorted distribution whose cumulative probability
    reaches ``p``; never empty
    """
    probs = check_distribution(dist)
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"top_p must be in (0, 1], got {p}")

    chosen = []
    cumulative = 0.0
    for index, prob in sort_probs(probs):
        if chosen and prob == 0.0:
            break
        chosen.append(index)
        cumulative += prob
        if cumulative >= p - CUMULATIVE_TOL:
            break

    return tuple(sorted(chosen))


def top_pk_select(dist, p: float, k: int) -> Tuple[Tuple[int, ...], bool]:
    """
    Top-p, widened to Top-k when Top-p activates fewer than k experts

    Returns:
        (selected, used_fallback)
    """
    by_p = top_p_select(dist, p)
    if len(by_p) >= k:
        return by_p, False
    return top_k_select(dist, k), True


def _restrict(dist: np.ndarray, selected: Tuple[int, ...]) -> np.ndarray:
    """Distribution restricted to ``selected`` and renormalised"""
    weights = np.zeros_like(dist)
    idx = list(selected)
    weights[idx] = dist[idx] / np.sum(dist[idx])
    return weights


def _decision(strategy: Strategy, selected: Tuple[int, ...], dist: np.ndarray, entropy_norm: float) -> RouterDecision:
    if strategy is Strategy.SOFT:
        weights = dist.copy()
    else:
        weights = _restrict(dist, selected)
    return RouterDecision(
        strategy=strategy,
        selected=selected,
        weights=weights,
        raw_dist=dist.copy(),
        entropy_norm=entropy_norm,
    )


def _top_pk_decision(dist: np.ndarray, cfg: RoutingConfig, entropy_norm: float) -> RouterDecision:
    selected, used_fallback = top_pk_select(dist, cfg.top_p, cfg.keep_top_k)
    strategy = Strategy.TOP_K_FALLBACK if used_fallback else Strategy.TOP_P
    return _decision(strategy, selected, dist, entropy_norm)


def _check_config(dist: np.ndarray, cfg: RoutingConfig):
    if dist.size != cfg.n_experts:
        raise ShapeError(f"distribution has {dist.size} entries, config expects {cfg.n_experts} experts")


def hybrid_route(dist, cfg: RoutingConfig) -> RouterDecision:
    """
    Entropy-dispatched routing

    Soft routing over every expert when the normalised Tsallis entropy is
    strictly above ``cfg.entropy_threshold``, Top-(p,k) otherwise.
    """
    dist = check_distribution(dist)
    _check_config(dist, cfg)
    if dist.size < 2:
        raise DomainError("hybrid routing needs at least two experts")

    entropy_norm = normalized_tsallis(dist, cfg.entropic_index)
    if entropy_norm > cfg.entropy_threshold:
        return _decision(Strategy.SOFT, tuple(range(dist.size)), dist, entropy_norm)
    return _top_pk_decision(dist, cfg, entropy_norm)


def route_distribution(dist, cfg: RoutingConfig) -> RouterDecision:
    """
    Route a distribution under ``cfg.mode``

    A single-expert layer always routes soft to its only expert.
    """
    dist = check_distribution(dist)
    _check_config(dist, cfg)

    if dist.size == 1:
        return _decision(Strategy.SOFT, (0,), dist, 0.0)

    mode = RoutingMode(cfg.mode)
    if mode is RoutingMode.HYBRID:
        return hybrid_route(dist, cfg)

    entropy_norm = normalized_tsallis(dist, cfg.entropic_index)
    if mode is RoutingMode.SOFT:
        return _decision(Strategy.SOFT, tuple(range(dist.size)), dist, entropy_norm)
    if mode is RoutingMode.TOP_K:
        return _decision(Strategy.TOP_K, top_k_select(dist, cfg.keep_top_k), dist, entropy_norm)
    return _top_pk_decision(dist, cfg, entropy_norm)
