"""
Typed configuration models for routing, losses, layers, tasks and training runs
"""
import copy
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import settings
from errors import ConfigError


class Strategy(str, Enum):
    """Routing strategy that fired for a token"""
    SOFT = "Soft"
    TOP_P = "TopP"
    TOP_K_FALLBACK = "TopKFallback"
    TOP_K = "TopK"


class RoutingMode(str, Enum):
    """Which routing rule a layer applies"""
    HYBRID = "hybrid"     # soft above the entropy threshold, Top-(p,k) otherwise
    SOFT = "soft"         # always every expert
    TOP_K = "top_k"       # always exactly k experts
    TOP_P = "top_p"       # Top-(p,k) with the soft branch disabled


class OptimizerName(str, Enum):
    SGD = "sgd"
    ADAMW = "adamw"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)


class RoutingConfig(_Strict):
    """Hyperparameters of the router"""

    n_experts: int = Field(default=6, ge=1)
    top_p: float = Field(default=0.75, gt=0.0, le=1.0)
    keep_top_k: int = Field(default=2, ge=1)
    entropy_threshold: float = Field(default=0.9, ge=0.0, le=1.0)
    entropic_index: float = Field(default=1.1, gt=0.0)
    mode: RoutingMode = RoutingMode.HYBRID

    @model_validator(mode="after")
    def _k_fits(self):
        if self.keep_top_k > self.n_experts:
            raise ValueError(
                f"keep_top_k ({self.keep_top_k}) exceeds n_experts ({self.n_experts})"
            )
        return self


class LossConfig(_Strict):
    """
    Auxiliary objective coefficients

    ``entropy_sign`` is +1 to add the entropy term to the loss (router
    uncertainty is penalised) and -1 to subtract it.
    """

    beta: float = Field(default=1e-2, ge=0.0)
    alpha: float = Field(default=1e-2, ge=0.0)
    q: float = Field(default=1.1, gt=0.0)
    entropy_sign: Literal[1, -1] = 1


LAYER_PRESETS: Dict[str, Dict[str, int]] = {
    "desk": {"rank": 4, "lora_alpha": 8},
    "medium": {"rank": 16, "lora_alpha": 32},
    "large": {"rank": 24, "lora_alpha": 48},
}


class LayerSpec(_Strict):
    """Shape of a MoLE layer; experts share rank and scaling"""

    input_dim: int = Field(default=16, ge=1)
    output_dim: int = Field(default=8, ge=1)
    rank: int = Field(default=4, ge=1)
    lora_alpha: float = Field(default=8.0, gt=0.0)

    @model_validator(mode="after")
    def _low_rank(self):
        if 2 * self.rank > min(self.input_dim, self.output_dim):
            raise ValueError(
                f"rank {self.rank} is not low-rank for a {self.output_dim}x{self.input_dim} weight "
                f"(need rank <= {min(self.input_dim, self.output_dim) // 2})"
            )
        return self

    @property
    def scaling(self) -> float:
        return self.lora_alpha / self.rank

    @classmethod
    def preset(cls, name: str, input_dim: int, output_dim: int) -> "LayerSpec":
        if name not in LAYER_PRESETS:
            raise ConfigError(f"Unknown layer preset '{name}'. Known: {', '.join(LAYER_PRESETS)}")
        return cls(input_dim=input_dim, output_dim=output_dim, **LAYER_PRESETS[name])


class SyntheticTaskSpec(_Strict):
    """Gaussian clusters, each mapped to its target by its own hidden linear map"""

    n_clusters: int = Field(default=2, ge=2)
    input_dim: int = Field(default=16, ge=1)
    output_dim: int = Field(default=8, ge=1)
    samples_per_cluster: int = Field(default=64, ge=1)
    noise_std: float = Field(default=0.05, ge=0.0)
    cluster_std: float = Field(default=0.5, ge=0.0)
    center_scale: float = Field(default=3.0, gt=0.0)
    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0, lt=2 ** 64)


class TrainConfig(_Strict):
    """Optimisation loop settings"""

    routing: RoutingConfig = Field(default_factory=lambda: RoutingConfig(n_experts=4))
    loss: LossConfig = Field(default_factory=LossConfig)
    learning_rate: float = Field(default=0.05, ge=0.0)
    batch_size: int = Field(default=16, ge=1)
    steps: int = Field(default=2000, ge=1)
    round_length: int = Field(default=320, ge=1)
    accumulation_steps: int = Field(default=1, ge=1)
    optimizer: OptimizerName = OptimizerName.SGD
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0, lt=2 ** 64)


class GradCheckConfig(_Strict):
    eps: float = Field(default=1e-6, ge=1e-7, le=1e-4)
    batch_size: int = Field(default=8, ge=1)
    tolerance: float = Field(default=1e-4, gt=0.0)


class OutputConfig(_Strict):
    run_name: str = "run"
    report: str = "report.json"
    trace: str = "trace.csv"
    checkpoint: str = "checkpoint.npz"
    summary: str = "summary.csv"


class ExperimentConfig(_Strict):
    """Everything one CLI invocation needs, loaded from a JSON file"""

    layer: LayerSpec = Field(default_factory=LayerSpec)
    task: SyntheticTaskSpec = Field(default_factory=SyntheticTaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    gradcheck: GradCheckConfig = Field(default_factory=GradCheckConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _dims_agree(self):
        if (self.task.input_dim, self.task.output_dim) != (self.layer.input_dim, self.layer.output_dim):
            raise ValueError(
                f"task dims ({self.task.input_dim}, {self.task.output_dim}) do not match "
                f"layer dims ({self.layer.input_dim}, {self.layer.output_dim})"
            )
        return self


# Baseline methods expressed as dotted overrides on an ExperimentConfig
METHOD_PRESETS: Dict[str, Dict[str, Any]] = {
    "loramoe": {"train.routing.mode": "soft", "train.loss.beta": 0.0},
    "mola": {"train.routing.mode": "top_k", "train.routing.keep_top_k": 2, "train.loss.beta": 0.0},
    "top_pk": {"train.routing.mode": "top_p", "train.routing.keep_top_k": 1, "train.loss.beta": 0.0},
    "hybrid_no_entropy": {"train.routing.mode": "hybrid", "train.loss.beta": 0.0},
    "hybrid": {"train.routing.mode": "hybrid", "train.loss.beta": 1e-2},
}

# Short ablation axis names -> dotted config paths they set
AXIS_ALIASES: Dict[str, tuple] = {
    "beta": ("train.loss.beta",),
    "alpha": ("train.loss.alpha",),
    "q": ("train.routing.entropic_index", "train.loss.q"),
    "threshold": ("train.routing.entropy_threshold",),
    "entropy_threshold": ("train.routing.entropy_threshold",),
    "p": ("train.routing.top_p",),
    "top_p": ("train.routing.top_p",),
    "k": ("train.routing.keep_top_k",),
    "keep_top_k": ("train.routing.keep_top_k",),
    "lr": ("train.learning_rate",),
    "learning_rate": ("train.learning_rate",),
    "mode": ("train.routing.mode",),
    "seed": ("train.seed",),
}


def resolve_path(key: str) -> tuple:
    """
    Expand an override key into full dotted paths

    Accepts axis aliases (``q``), section-relative paths (``routing.keep_top_k``)
    and full paths (``train.routing.keep_top_k``).
    """
    if key in AXIS_ALIASES:
        return AXIS_ALIASES[key]
    head = key.split(".", 1)[0]
    if head in ("routing", "loss"):
        return (f"train.{key}",)
    return (key,)


def apply_overrides(raw: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Apply dotted-path overrides to a raw config dict

    Returns:
        A new dict; ``raw`` is left untouched
    """
    data = copy.deepcopy(raw)
    defaults = ExperimentConfig().model_dump(mode="json")

    for key, value in overrides.items():
        for path in resolve_path(key):
            parts = path.split(".")
            node, schema = data, defaults
            for part in parts[:-1]:
                if not isinstance(schema, dict) or part not in schema:
                    raise ConfigError(f"Unknown config section '{part}' in override '{key}'")
                schema = schema[part]
                node = node.setdefault(part, {})
            if not isinstance(schema, dict) or parts[-1] not in schema:
                raise ConfigError(f"Unknown config key '{path}' in override '{key}'")
            node[parts[-1]] = value

    return data


def build_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Validate a raw dict (after overrides) into an ExperimentConfig"""
    data = apply_overrides(raw, overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(
    path: Optional[Path],
    overrides: Optional[Dict[str, Any]] = None,
    method: Optional[str] = None,
    layer_preset: Optional[str] = None,
) -> ExperimentConfig:
    """
    Load an ExperimentConfig from a JSON file

    Precedence (lowest to highest): built-in defaults, file, method preset,
    layer preset (rank and lora_alpha only), explicit overrides. Validation
    runs once, after every layer is applied.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

    merged: Dict[str, Any] = {}
    if method is not None:
        if method not in METHOD_PRESETS:
            raise ConfigError(f"Unknown method '{method}'. Known: {', '.join(METHOD_PRESETS)}")
        merged.update(METHOD_PRESETS[method])
    if layer_preset is not None:
        if layer_preset not in LAYER_PRESETS:
            raise ConfigError(f"Unknown layer preset '{layer_preset}'. Known: {', '.join(LAYER_PRESETS)}")
        merged.update({f"layer.{key}": value for key, value in LAYER_PRESETS[layer_preset].items()})
    merged.update(overrides or {})

    return build_config(raw, merged)
