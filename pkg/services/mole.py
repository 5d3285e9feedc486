"""
LoRA experts and the mixture-of-LoRA-experts layer

    y = W0 x + sum_{i in selected} w_i * s * B_i A_i x,    G(x) = softmax(x W_g)

Forward keeps a cache for the hand-derived backward pass. The discrete
selection is treated as a constant during backward; gradients reach W_g
through the (renormalised) weights of the selected experts only.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from errors import ConfigError, ShapeError, UsageError
from models import LayerSpec, RoutingConfig, Strategy
from services.numerics import as_matrix, as_vector, make_rng, matvec, softmax, softmax_backward
from services.routing import RouterDecision, route_distribution

logger = logging.getLogger(__name__)


@dataclass
class LoraExpert:
    """One low-rank update scaling * B @ A"""

    a: np.ndarray  # (rank, input_dim)
    b: np.ndarray  # (output_dim, rank)
    scaling: float = 1.0

    def __post_init__(self):
        self.a = as_matrix(self.a, "A")
        self.b = as_matrix(self.b, "B")
        if self.b.shape[1] != self.a.shape[0]:
            raise ShapeError(f"B is {self.b.shape} but A is {self.a.shape}; inner ranks differ")
        if 2 * self.rank > min(self.output_dim, self.input_dim):
            raise ConfigError(
                f"rank {self.rank} too large for a {self.output_dim}x{self.input_dim} update"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def input_dim(self) -> int:
        return self.a.shape[1]

    @property
    def output_dim(self) -> int:
        return self.b.shape[0]


@dataclass
class Router:
    w_g: np.ndarray  # (input_dim, n_experts)

    def __post_init__(self):
        self.w_g = as_matrix(self.w_g, "W_g")


@dataclass
class MoleLayer:
    """
    Frozen base weight, router and N LoRA experts

    ``version`` increases on every parameter update so a forward cache can
    be checked against the parameters it was computed with.
    """

    w0: np.ndarray  # (output_dim, input_dim), frozen
    router: Router
    experts: List[LoraExpert]
    cfg: RoutingConfig
    seed: Optional[int] = None
    layer_id: int = 0
    version: int = 0

    def __post_init__(self):
        self.w0 = as_matrix(self.w0, "W0").copy()
        self.w0.flags.writeable = False
        if len(self.experts) != self.cfg.n_experts:
            raise ConfigError(f"layer has {len(self.experts)} experts, config says {self.cfg.n_experts}")
        for i, expert in enumerate(self.experts):
            if (expert.output_dim, expert.input_dim) != self.w0.shape:
                raise ShapeError(f"expert {i} maps {expert.input_dim}->{expert.output_dim}, W0 is {self.w0.shape}")
            if expert.a.shape != self.experts[0].a.shape:
                raise ShapeError(f"expert {i} has rank {expert.rank}, expert 0 has {self.experts[0].rank}")
        if self.router.w_g.shape != (self.input_dim, self.n_experts):
            raise ShapeError(f"W_g is {self.router.w_g.shape}, expected {(self.input_dim, self.n_experts)}")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def input_dim(self) -> int:
        return self.w0.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w0.shape[0]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays by name (live references; W0 is not included)"""
        params = {"router.w_g": self.router.w_g}
        for i, expert in enumerate(self.experts):
            params[f"experts.{i}.a"] = expert.a
            params[f"experts.{i}.b"] = expert.b
        return params

    def mark_updated(self):
        self.version += 1


@dataclass
class LayerGradients:
    """Gradients mirroring the trainable parameters; W0 has no slot"""

    d_a: List[np.ndarray]
    d_b: List[np.ndarray]
    d_wg: np.ndarray
    # dL/dw_i holding the other mixture weights fixed (zero for unselected experts)
    d_gate: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros_like(cls, layer: MoleLayer) -> "LayerGradients":
        return cls(
            d_a=[np.zeros_like(e.a) for e in layer.experts],
            d_b=[np.zeros_like(e.b) for e in layer.experts],
            d_wg=np.zeros_like(layer.router.w_g),
            d_gate=np.zeros(layer.n_experts),
        )

    def add_(self, other: "LayerGradients") -> "LayerGradients":
        """In-place accumulation"""
        for mine, theirs in zip(self.d_a, other.d_a):
            mine += theirs
        for mine, theirs in zip(self.d_b, other.d_b):
            mine += theirs
        self.d_wg += other.d_wg
        self.d_gate = self.d_gate + other.d_gate
        return self

    def scale_(self, factor: float) -> "LayerGradients":
        for g in self.d_a + self.d_b:
            g *= factor
        self.d_wg *= factor
        self.d_gate = self.d_gate * factor
        return self

    def as_dict(self) -> Dict[str, np.ndarray]:
        """Same keys as ``MoleLayer.parameters``"""
        grads = {"router.w_g": self.d_wg}
        for i, (da, db) in enumerate(zip(self.d_a, self.d_b)):
            grads[f"experts.{i}.a"] = da
            grads[f"experts.{i}.b"] = db
        return grads


@dataclass
class ForwardCache:
    x: np.ndarray
    logits: np.ndarray
    decision: RouterDecision
    hidden: Dict[int, np.ndarray]      # A_i x for selected experts
    expert_out: Dict[int, np.ndarray]  # E_i(x) for selected experts
    layer_key: int
    version: int


def init_layer(
    dims: LayerSpec,
    cfg: RoutingConfig,
    rng: Union[int, np.random.Generator],
) -> MoleLayer:
    """
    Build a layer in its step-0 state

    B = 0 so every expert starts as a zero update, W_g = 0 so the router is
    exactly uniform, A ~ U(-1/sqrt(k), 1/sqrt(k)) and W0 is a fixed random
    matrix standing in for pretrained weights.
    """
    if not isinstance(dims, LayerSpec):
        raise ConfigError("dims must be a LayerSpec")
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = make_rng(seed)

    k_in, d_out, r = dims.input_dim, dims.output_dim, dims.rank
    bound = 1.0 / np.sqrt(k_in)

    w0 = rng.standard_normal((d_out, k_in)) / np.sqrt(k_in)
    experts = [
        LoraExpert(
            a=rng.uniform(-bound, bound, size=(r, k_in)),
            b=np.zeros((d_out, r)),
            scaling=dims.scaling,
        )
        for _ in range(cfg.n_experts)
    ]
    router = Router(w_g=np.zeros((k_in, cfg.n_experts)))

    logger.debug(f"Initialised layer: {k_in}->{d_out}, {cfg.n_experts} experts of rank {r}")
    return MoleLayer(w0=w0, router=router, experts=experts, cfg=cfg, seed=seed)


def expert_forward(e: LoraExpert, x) -> np.ndarray:
    """E(x) = scaling * B (A x)"""
    x = as_vector(x, "input")
    return e.scaling * (e.b @ matvec(e.a, x))


def router_logits(layer: MoleLayer, x: np.ndarray) -> np.ndarray:
    w_g = layer.router.w_g
    if x.shape[0] != w_g.shape[0]:
        raise ShapeError(f"input has length {x.shape[0]}, router expects {w_g.shape[0]}")
    return x @ w_g


def route(layer: MoleLayer, x) -> RouterDecision:
    """Routing decision for one token under the layer's config"""
    x = as_vector(x, "input")
    return route_distribution(softmax(router_logits(layer, x)), layer.cfg)


def mix(layer: MoleLayer, x, weights, selected: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """
    W0 x + sum_i weights_i E_i(x) over ``selected`` (default: every expert)

    The gate weights are free inputs here, which makes this the function to
    differentiate when studying dL/dG_i.
    """
    x = as_vector(x, "input")
    weights = np.asarray(weights, dtype=np.float64)
    indices = range(layer.n_experts) if selected is None else selected
    y = matvec(layer.w0, x)
    for i in indices:
        y = y + weights[i] * expert_forward(layer.experts[i], x)
    return y


def mole_forward(layer: MoleLayer, x) -> Tuple[np.ndarray, RouterDecision, ForwardCache]:
    """
    Forward pass for one token

    Returns:
        (y, decision, cache)
    """
    x = as_vector(x, "input")
    logits = router_logits(layer, x)
    decision = route_distribution(softmax(logits), layer.cfg)

    y = matvec(layer.w0, x)
    hidden, expert_out = {}, {}
    for i in decision.selected:
        expert = layer.experts[i]
        h = expert.a @ x
        out = expert.scaling * (expert.b @ h)
        hidden[i] = h
        expert_out[i] = out
        y = y + decision.weights[i] * out

    cache = ForwardCache(
        x=x,
        logits=logits,
        decision=decision,
        hidden=hidden,
        expert_out=expert_out,
        layer_key=id(layer),
        version=layer.version,
    )
    return y, decision, cache


def mole_backward(
    layer: MoleLayer,
    cache: ForwardCache,
    dy,
    d_logits: Optional[np.ndarray] = None,
) -> LayerGradients:
    """
    Gradients of a scalar loss given dL/dy for one token

    Args:
        layer: the layer the cache was computed with
        cache: from ``mole_forward``
        dy: dL/dy
        d_logits: extra gradient w.r.t. the router logits (auxiliary losses)

    Raises:
        UsageError: the cache belongs to another layer or predates an update
    """
    if cache.layer_key != id(layer) or cache.version != layer.version:
        raise UsageError("forward cache is stale: the layer changed since the forward pass")

    dy = as_vector(dy, "dy")
    if dy.shape[0] != layer.output_dim:
        raise ShapeError(f"dy has length {dy.shape[0]}, layer outputs {layer.output_dim}")

    decision = cache.decision
    dist, weights = decision.raw_dist, decision.weights
    grads = LayerGradients.zeros_like(layer)

    for i in decision.selected:
        expert = layer.experts[i]
        coeff = weights[i] * expert.scaling
        grads.d_b[i] = coeff * np.outer(dy, cache.hidden[i])
        grads.d_a[i] = coeff * np.outer(expert.b.T @ dy, cache.x)
        grads.d_gate[i] = float(dy @ cache.expert_out[i])

    idx = list(decision.selected)
    d_dist = np.zeros_like(dist)
    if decision.strategy is Strategy.SOFT:
        d_dist[idx] = grads.d_gate[idx]
    else:
        # w_i = G_i / Z over the selected set
        z = np.sum(dist[idx])
        d_dist[idx] = (grads.d_gate[idx] - np.dot(weights[idx], grads.d_gate[idx])) / z

    dz = softmax_backward(dist, d_dist)
    if d_logits is not None:
        dz = dz + np.asarray(d_logits, dtype=np.float64)
    grads.d_wg = np.outer(cache.x, dz)
    return grads
