"""
Trainer - synthetic task generation, the optimisation loop, ablation grids
and the finite-difference gradient check
"""
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from errors import ConfigError, DivergenceError, NumericError, ShapeError
from models import ExperimentConfig, LossConfig, Strategy, SyntheticTaskSpec, TrainConfig, build_config
from services.losses import auxiliary_loss, aux_loss_grads, collect_stats, task_loss
from services.metrics import RoundStat, RoutingTrace, mean_entropy, round_stats
from services.mole import LayerGradients, MoleLayer, init_layer, mole_backward, mole_forward, route
from services.numerics import make_rng, scaled_error
from services.optimizers import build_optimizer

logger = logging.getLogger(__name__)

CENTER_ATTEMPTS = 100
# Substream of the training seed used for minibatch sampling
BATCH_STREAM = 1


@dataclass
class SyntheticDataset:
    inputs: np.ndarray   # (M, input_dim)
    targets: np.ndarray  # (M, output_dim)
    labels: np.ndarray   # (M,) cluster index
    centers: np.ndarray  # (n_clusters, input_dim)
    maps: np.ndarray     # (n_clusters, output_dim, input_dim)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def generate_task(spec: SyntheticTaskSpec) -> SyntheticDataset:
    """
    Gaussian clusters around well-separated centers, each cluster's targets
    given by its own hidden linear map plus noise

    Centers lie on a sphere of radius ``center_scale`` and are redrawn until
    every pair is at least 4 * max(noise_std, cluster_std) apart.
    """
    rng = make_rng(spec.seed)
    k, d, c = spec.input_dim, spec.output_dim, spec.n_clusters
    min_distance = 4.0 * max(spec.noise_std, spec.cluster_std)

    for _ in range(CENTER_ATTEMPTS):
        centers = rng.standard_normal((c, k))
        centers *= spec.center_scale / np.linalg.norm(centers, axis=1, keepdims=True)
        gaps = [np.linalg.norm(centers[i] - centers[j]) for i, j in itertools.combinations(range(c), 2)]
        if min(gaps) >= min_distance:
            break
    else:
        raise ConfigError(
            f"could not place {c} centers of radius {spec.center_scale} at distance >= {min_distance}"
        )

    maps = rng.standard_normal((c, d, k)) / np.sqrt(k)

    inputs, targets, labels = [], [], []
    for cluster in range(c):
        x = centers[cluster] + spec.cluster_std * rng.standard_normal((spec.samples_per_cluster, k))
        y = x @ maps[cluster].T + spec.noise_std * rng.standard_normal((spec.samples_per_cluster, d))
        inputs.append(x)
        targets.append(y)
        labels.append(np.full(spec.samples_per_cluster, cluster, dtype=np.int64))

    logger.info(f"Generated task: {c} clusters x {spec.samples_per_cluster} samples, {k}->{d}")
    return SyntheticDataset(
        inputs=np.vstack(inputs),
        targets=np.vstack(targets),
        labels=np.concatenate(labels),
        centers=centers,
        maps=maps,
    )


@dataclass
class StepRecord:
    step: int
    total_loss: float
    task_loss: float
    aux_loss: float
    mean_entropy: float
    strategy_counts: Dict[str, int]
    wall_time: float = 0.0


@dataclass
class RoundSummary:
    stat: RoundStat
    soft_fraction: float
    mean_entropy: float


@dataclass
class TrainReport:
    config: Dict[str, Any]
    seed: int
    steps: List[StepRecord] = field(default_factory=list)
    rounds: List[RoundSummary] = field(default_factory=list)
    trace: RoutingTrace = field(default_factory=RoutingTrace)
    initial_mean_entropy: float = float("nan")
    final_mean_entropy: float = float("nan")
    trace_file: Optional[str] = None
    status: str = "completed"

    @property
    def total_losses(self) -> List[float]:
        return [s.total_loss for s in self.steps]

    def to_dict(self, include_timing: Optional[bool] = None) -> Dict[str, Any]:
        """JSON-ready dict; timings only when requested (they are not reproducible)"""
        if include_timing is None:
            include_timing = settings.include_timing
        strategies = [s.value for s in Strategy]
        data = {
            "config": self.config,
            "seed": self.seed,
            "status": self.status,
            "steps": {
                "total_loss": [s.total_loss for s in self.steps],
                "task_loss": [s.task_loss for s in self.steps],
                "aux_loss": [s.aux_loss for s in self.steps],
                "mean_entropy": [s.mean_entropy for s in self.steps],
                "strategy_counts": {
                    name: [s.strategy_counts.get(name, 0) for s in self.steps] for name in strategies
                },
            },
            "rounds": [
                {
                    "index": r.stat.index,
                    "mean": r.stat.mean,
                    "std": r.stat.std,
                    "count": r.stat.count,
                    "partial": r.stat.partial,
                    "soft_fraction": r.soft_fraction,
                    "mean_entropy": r.mean_entropy,
                }
                for r in self.rounds
            ],
            "initial_mean_entropy": self.initial_mean_entropy,
            "final_mean_entropy": self.final_mean_entropy,
            "trace_file": self.trace_file,
        }
        if include_timing:
            data["steps"]["wall_time"] = [s.wall_time for s in self.steps]
        return data

    def to_frame(self):
        """Per-step table (one row per step)"""
        columns = ["step", "total_loss", "task_loss", "aux_loss", "mean_entropy"]
        columns += [f"n_{s.value}" for s in Strategy]
        rows = []
        for s in self.steps:
            row = {
                "step": s.step,
                "total_loss": s.total_loss,
                "task_loss": s.task_loss,
                "aux_loss": s.aux_loss,
                "mean_entropy": s.mean_entropy,
            }
            row.update({f"n_{name.value}": s.strategy_counts.get(name.value, 0) for name in Strategy})
            rows.append(row)
        return pd.DataFrame(rows, columns=columns)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainReport":
        """Inverse of ``to_dict`` (the trace itself lives in ``trace_file``)"""
        steps_data = data["steps"]
        counts = steps_data.get("strategy_counts", {})
        wall = steps_data.get("wall_time")
        steps = [
            StepRecord(
                step=i,
                total_loss=float(steps_data["total_loss"][i]),
                task_loss=float(steps_data["task_loss"][i]),
                aux_loss=float(steps_data["aux_loss"][i]),
                mean_entropy=float(steps_data["mean_entropy"][i]),
                strategy_counts={name: int(values[i]) for name, values in counts.items()},
                wall_time=float(wall[i]) if wall else 0.0,
            )
            for i in range(len(steps_data["total_loss"]))
        ]
        rounds = [
            RoundSummary(
                stat=RoundStat(
                    index=int(r["index"]),
                    mean=float(r["mean"]),
                    std=float(r["std"]),
                    count=int(r["count"]),
                    partial=bool(r["partial"]),
                ),
                soft_fraction=float(r["soft_fraction"]),
                mean_entropy=float(r["mean_entropy"]),
            )
            for r in data.get("rounds", [])
        ]
        return cls(
            config=data.get("config", {}),
            seed=data.get("seed"),
            steps=steps,
            rounds=rounds,
            initial_mean_entropy=float(data.get("initial_mean_entropy", float("nan"))),
            final_mean_entropy=float(data.get("final_mean_entropy", float("nan"))),
            trace_file=data.get("trace_file"),
            status=data.get("status", "completed"),
        )


@dataclass
class BatchResult:
    total_loss: float
    task_loss: float
    aux_loss: float
    grads: LayerGradients
    decisions: list


def batch_rng(cfg: TrainConfig) -> np.random.Generator:
    return make_rng(cfg.seed, stream=BATCH_STREAM)


def sample_batch(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    """Indices of one minibatch (without replacement when the data allows)"""
    return rng.choice(n, size=batch_size, replace=batch_size > n)


def batch_gradients(layer: MoleLayer, inputs: np.ndarray, targets: np.ndarray, loss_cfg: LossConfig) -> BatchResult:
    """
    Loss and parameter gradients of one minibatch

    Objective: mean task loss over the batch + auxiliary loss of the batch.
    """
    t = inputs.shape[0]
    caches, decisions, dys = [], [], []
    task_total = 0.0
    for x, target in zip(inputs, targets):
        y, decision, cache = mole_forward(layer, x)
        loss, dy = task_loss(y, target)
        task_total += loss
        caches.append(cache)
        decisions.append(decision)
        dys.append(dy / t)

    stats = collect_stats(decisions, np.vstack([c.logits for c in caches]))
    mean_task = task_total / t
    aux = auxiliary_loss(stats, loss_cfg, layer.n_experts)
    d_logits = aux_loss_grads(stats, loss_cfg, layer.n_experts)

    grads = LayerGradients.zeros_like(layer)
    for row, (cache, dy) in enumerate(zip(caches, dys)):
        grads.add_(mole_backward(layer, cache, dy, d_logits[row]))

    return BatchResult(
        total_loss=mean_task + aux,
        task_loss=mean_task,
        aux_loss=aux,
        grads=grads,
        decisions=decisions,
    )


def batch_objective(layer: MoleLayer, inputs: np.ndarray, targets: np.ndarray,
                    loss_cfg: LossConfig) -> Tuple[float, List[Tuple[int, ...]]]:
    """Total loss of a batch and the per-token selections that produced it"""
    t = inputs.shape[0]
    decisions, logits = [], []
    task_total = 0.0
    for x, target in zip(inputs, targets):
        y, decision, cache = mole_forward(layer, x)
        task_total += task_loss(y, target)[0]
        decisions.append(decision)
        logits.append(cache.logits)
    stats = collect_stats(decisions, np.vstack(logits))
    total = task_total / t + auxiliary_loss(stats, loss_cfg, layer.n_experts)
    return total, [d.selected for d in decisions]


def route_dataset(layer: MoleLayer, data: SyntheticDataset, config: Optional[dict] = None) -> RoutingTrace:
    decisions = [route(layer, x) for x in data.inputs]
    return RoutingTrace.from_decisions(decisions, layer_id=layer.layer_id, labels=data.labels, config=config)


def _summarise_rounds(steps: Sequence[StepRecord], round_length: int) -> List[RoundSummary]:
    summaries = []
    for stat in round_stats([s.total_loss for s in steps], round_length):
        window = steps[stat.index * round_length: stat.index * round_length + stat.count]
        tokens = sum(sum(s.strategy_counts.values()) for s in window)
        soft = sum(s.strategy_counts.get(Strategy.SOFT.value, 0) for s in window)
        summaries.append(RoundSummary(
            stat=stat,
            soft_fraction=soft / tokens if tokens else 0.0,
            mean_entropy=float(np.mean([s.mean_entropy for s in window])),
        ))
    return summaries


def train(layer: MoleLayer, data: SyntheticDataset, cfg: TrainConfig) -> TrainReport:
    """
    Minibatch training of A, B and W_g; W0 is never touched

    Raises:
        DivergenceError: a step produced a non-finite loss (the partial
            report, including that step, is attached)
    """
    if data.inputs.shape[1] != layer.input_dim or data.targets.shape[1] != layer.output_dim:
        raise ShapeError(
            f"data maps {data.inputs.shape[1]}->{data.targets.shape[1]}, "
            f"layer maps {layer.input_dim}->{layer.output_dim}"
        )
    if cfg.routing.n_experts != layer.n_experts:
        raise ConfigError(f"routing config has {cfg.routing.n_experts} experts, layer has {layer.n_experts}")
    layer.cfg = cfg.routing

    rng = batch_rng(cfg)
    optimizer = build_optimizer(cfg)
    params = layer.parameters()
    report = TrainReport(config=cfg.model_dump(mode="json"), seed=cfg.seed)
    report.initial_mean_entropy = mean_entropy(route_dataset(layer, data))

    logger.info(
        f"Training {cfg.steps} steps: batch {cfg.batch_size}, lr {cfg.learning_rate}, "
        f"optimizer {cfg.optimizer.value}, routing {cfg.routing.mode.value}"
    )

    pending: Optional[LayerGradients] = None
    pending_count = 0
    for step in range(cfg.steps):
        started = time.perf_counter()
        idx = sample_batch(rng, len(data), cfg.batch_size)
        try:
            result = batch_gradients(layer, data.inputs[idx], data.targets[idx], cfg.loss)
        except NumericError as e:
            # parameters overflowed before a loss could be formed
            report.steps.append(StepRecord(
                step=step,
                total_loss=float("nan"),
                task_loss=float("nan"),
                aux_loss=float("nan"),
                mean_entropy=float("nan"),
                strategy_counts={},
                wall_time=time.perf_counter() - started,
            ))
            report.status = "diverged"
            logger.error(f"Non-finite values at step {step}: {e}")
            raise DivergenceError(f"non-finite values at step {step}: {e}", report=report) from e

        counts: Dict[str, int] = {}
        for d in result.decisions:
            counts[d.strategy.value] = counts.get(d.strategy.value, 0) + 1
        record = StepRecord(
            step=step,
            total_loss=result.total_loss,
            task_loss=result.task_loss,
            aux_loss=result.aux_loss,
            mean_entropy=float(np.mean([d.entropy_norm for d in result.decisions])),
            strategy_counts=counts,
        )

        if not np.isfinite(result.total_loss):
            record.wall_time = time.perf_counter() - started
            report.steps.append(record)
            report.status = "diverged"
            logger.error(f"Loss became non-finite at step {step}: {result.total_loss}")
            raise DivergenceError(f"non-finite loss at step {step}", report=report)

        if pending is None:
            pending = result.grads
        else:
            pending.add_(result.grads)
        pending_count += 1
        if pending_count == cfg.accumulation_steps or step == cfg.steps - 1:
            if pending_count > 1:
                pending.scale_(1.0 / pending_count)
            optimizer.step(params, pending.as_dict())
            layer.mark_updated()
            pending, pending_count = None, 0

        record.wall_time = time.perf_counter() - started
        report.steps.append(record)

        if (step + 1) % cfg.round_length == 0:
            window = report.steps[-cfg.round_length:]
            logger.info(
                f"Round {(step + 1) // cfg.round_length}: "
                f"loss {np.mean([s.total_loss for s in window]):.6f}, "
                f"entropy {np.mean([s.mean_entropy for s in window]):.4f}"
            )
        else:
            logger.debug(f"Step {step}: loss {record.total_loss:.6f}")

    report.rounds = _summarise_rounds(report.steps, cfg.round_length)
    report.trace = route_dataset(layer, data, config=report.config)
    report.final_mean_entropy = mean_entropy(report.trace)
    logger.info(
        f"Training finished: entropy {report.initial_mean_entropy:.4f} -> {report.final_mean_entropy:.4f}"
    )
    return report


def run_experiment(config: ExperimentConfig) -> Tuple[MoleLayer, SyntheticDataset, TrainReport]:
    """Generate the task, initialise a fresh layer and train it"""
    data = generate_task(config.task)
    layer = init_layer(config.layer, config.train.routing, config.train.seed)
    report = train(layer, data, config.train)
    report.config = config.model_dump(mode="json")
    report.trace.config = report.config
    return layer, data, report


@dataclass
class AblationResult:
    point: Dict[str, Any]
    config: ExperimentConfig
    report: TrainReport


def expand_grid(base: ExperimentConfig, grid: Dict[str, Sequence[Any]]) -> List[Tuple[Dict[str, Any], ExperimentConfig]]:
    """
    Cartesian product of the grid axes, each point validated into a config

    Raises:
        ConfigError: any point is invalid (raised before anything runs)
    """
    raw = base.model_dump(mode="json")
    names = list(grid)
    for name in names:
        if len(grid[name]) == 0:
            raise ConfigError(f"ablation axis '{name}' has no values")

    points = []
    for values in itertools.product(*(grid[name] for name in names)):
        point = dict(zip(names, values))
        points.append((point, build_config(raw, point)))
    return points


def _run_point(config: ExperimentConfig) -> TrainReport:
    try:
        return run_experiment(config)[2]
    except DivergenceError as e:
        if e.report is None:
            raise
        e.report.config = config.model_dump(mode="json")
        logger.warning(f"Grid point diverged after {len(e.report.steps)} step(s): {e}")
        return e.report


def ablate(base: ExperimentConfig, grid: Dict[str, Sequence[Any]],
           workers: Optional[int] = None) -> List[AblationResult]:
    """
    One independent seeded run per grid point, in grid order

    Points fan out over ``workers`` processes when more than one is
    requested; results are merged back in grid order. A point that diverges
    does not stop the sweep: its partial report comes back with status
    "diverged".
    """
    points = expand_grid(base, grid)
    workers = settings.ablation_workers if workers is None else workers
    logger.info(f"Ablation over {len(points)} point(s) with {workers} worker(s)")

    configs = [config for _, config in points]
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_point, configs))
    else:
        reports = [_run_point(config) for config in configs]

    return [AblationResult(point=point, config=config, report=report)
            for (point, config), report in zip(points, reports)]


@dataclass
class GradCheckReport:
    max_error: float
    worst_parameter: Optional[str]
    worst_index: Optional[Tuple[int, ...]]
    checked: int
    skipped: List[Tuple[str, Tuple[int, ...]]]
    per_parameter: Dict[str, float]

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


def grad_check(layer: MoleLayer, batch: Tuple[np.ndarray, np.ndarray], cfg: LossConfig,
               eps: float = 1e-6) -> GradCheckReport:
    """
    Compare every analytic gradient of the total batch loss against central
    differences

    Entries whose +/- eps perturbation changes any token's selected set are
    reported as skipped: the difference quotient straddles a discrete jump.
    Errors use ``scaled_error`` (relative above magnitude 1, absolute below).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ConfigError(f"eps must be in [1e-7, 1e-4], got {eps}")
    inputs, targets = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in batch)

    analytic = batch_gradients(layer, inputs, targets, cfg).grads.as_dict()
    _, base_selection = batch_objective(layer, inputs, targets, cfg)

    max_error, worst_name, worst_index = 0.0, None, None
    checked, skipped, per_parameter = 0, [], {}
    for name, param in layer.parameters().items():
        param_max = 0.0
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + eps
            loss_plus, sel_plus = batch_objective(layer, inputs, targets, cfg)
            param[index] = original - eps
            loss_minus, sel_minus = batch_objective(layer, inputs, targets, cfg)
            param[index] = original

            if sel_plus != base_selection or sel_minus != base_selection:
                skipped.append((name, index))
                continue

            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            error = float(scaled_error(analytic[name][index], numeric))
            checked += 1
            param_max = max(param_max, error)
            if error > max_error or worst_name is None:
                max_error, worst_name, worst_index = max(error, max_error), name, index
        per_parameter[name] = param_max

    if skipped:
        logger.warning(f"Gradient check skipped {len(skipped)} entries at selection boundaries")
    logger.info(f"Gradient check: {checked} entries, max error {max_error:.3e} at {worst_name}{worst_index}")
    return GradCheckReport(
        max_error=max_error,
        worst_parameter=worst_name,
        worst_index=worst_index,
        checked=checked,
        skipped=skipped,
        per_parameter=per_parameter,
    )
