"""
Post-hoc analysis of routing traces and loss curves, plus CSV/JSON export

CSV trace columns:
    token_id, layer_id, entropy_norm, strategy, n_selected, argmax_expert,
    weights (semicolon-joined, one per expert), selected (semicolon-joined), label
JSON trace: {"n_experts": N, "config": {...}, "records": [{same fields}, ...]}
Floats are written with 17 significant digits so CSV round-trips exactly.
"""
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import settings
from errors import ExportError, UsageError
from models import Strategy
from services.routing import RouterDecision

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "token_id", "layer_id", "entropy_norm", "strategy",
    "n_selected", "argmax_expert", "weights", "selected", "label",
]


@dataclass(frozen=True)
class RoutingRecord:
    """One routed token"""

    token_id: int
    layer_id: int
    entropy_norm: float
    strategy: Strategy
    selected: Tuple[int, ...]
    weights: Tuple[float, ...]
    argmax_expert: int
    label: int = -1

    @property
    def n_selected(self) -> int:
        return len(self.selected)


@dataclass
class RoutingTrace:
    records: List[RoutingRecord] = field(default_factory=list)
    n_experts: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def extend(self, decisions: Iterable[RouterDecision], layer_id: int = 0,
               labels: Optional[Sequence[int]] = None):
        """Append decisions with consecutive token ids"""
        start = len(self.records)
        for offset, decision in enumerate(decisions):
            label = int(labels[offset]) if labels is not None else -1
            self.records.append(RoutingRecord(
                token_id=start + offset,
                layer_id=layer_id,
                entropy_norm=float(decision.entropy_norm),
                strategy=Strategy(decision.strategy),
                selected=tuple(int(i) for i in decision.selected),
                weights=tuple(float(w) for w in decision.weights),
                argmax_expert=decision.argmax_expert,
                label=label,
            ))
            self.n_experts = max(self.n_experts, len(decision.weights))
        return self

    @classmethod
    def from_decisions(cls, decisions: Iterable[RouterDecision], layer_id: int = 0,
                       labels: Optional[Sequence[int]] = None, config: Optional[dict] = None) -> "RoutingTrace":
        return cls(config=dict(config or {})).extend(decisions, layer_id, labels)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "token_id": r.token_id,
                "layer_id": r.layer_id,
                "entropy_norm": r.entropy_norm,
                "strategy": r.strategy.value,
                "n_selected": r.n_selected,
                "argmax_expert": r.argmax_expert,
                "weights": ";".join(_fmt(w) for w in r.weights),
                "selected": ";".join(str(i) for i in r.selected),
                "label": r.label,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_experts": self.n_experts,
            "config": self.config,
            "records": [
                {
                    "token_id": r.token_id,
                    "layer_id": r.layer_id,
                    "entropy_norm": r.entropy_norm,
                    "strategy": r.strategy.value,
                    "n_selected": r.n_selected,
                    "argmax_expert": r.argmax_expert,
                    "weights": list(r.weights),
                    "selected": list(r.selected),
                    "label": r.label,
                }
                for r in self.records
            ],
        }


@dataclass(frozen=True)
class RoundStat:
    index: int
    mean: float
    std: float
    count: int
    partial: bool = False


def _fmt(value: float) -> str:
    return f"{value:.{settings.float_digits}g}"


def _require(trace: RoutingTrace):
    if not trace.records:
        raise UsageError("routing trace is empty")


def avg_activated(trace: RoutingTrace) -> Dict[int, float]:
    """Mean number of selected experts per layer id"""
    _require(trace)
    totals: Dict[int, List[int]] = defaultdict(list)
    for r in trace.records:
        totals[r.layer_id].append(r.n_selected)
    return {layer: float(np.mean(counts)) for layer, counts in sorted(totals.items())}


def strategy_mix(trace: RoutingTrace) -> Dict[str, float]:
    """Fraction of tokens per strategy (only strategies that occur)"""
    _require(trace)
    counts = Counter(r.strategy.value for r in trace.records)
    total = sum(counts.values())
    return {name: count / total for name, count in sorted(counts.items())}


def mean_entropy(trace: RoutingTrace) -> float:
    _require(trace)
    return float(np.mean([r.entropy_norm for r in trace.records]))


def expert_consistency(trace: RoutingTrace) -> float:
    """
    Fraction of labelled tokens whose argmax expert equals the most common
    argmax expert of their label
    """
    by_label: Dict[int, List[int]] = defaultdict(list)
    for r in trace.records:
        if r.label >= 0:
            by_label[r.label].append(r.argmax_expert)
    if not by_label:
        raise UsageError("trace has no labelled tokens")

    agree = 0
    total = 0
    for experts in by_label.values():
        counts = Counter(experts)
        # most common, lowest expert index on ties
        majority = min(counts, key=lambda e: (-counts[e], e))
        agree += counts[majority]
        total += len(experts)
    return agree / total


def round_stats(losses: Sequence[float], round_length: int) -> List[RoundStat]:
    """
    Mean and population std over consecutive windows of ``round_length``

    A trailing incomplete window is returned last with ``partial=True``.
    """
    if round_length < 1:
        raise UsageError(f"round_length must be >= 1, got {round_length}")
    values = np.asarray(list(losses), dtype=np.float64)
    if values.size == 0:
        raise UsageError("no losses to summarise")

    stats = []
    for index, start in enumerate(range(0, values.size, round_length)):
        window = values[start:start + round_length]
        stats.append(RoundStat(
            index=index,
            mean=float(np.mean(window)),
            std=float(np.std(window)),
            count=int(window.size),
            partial=window.size < round_length,
        ))
    return stats


def render_json(data: Dict[str, Any]) -> str:
    """Sorted, indented JSON; equal data always renders to equal bytes"""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def export(obj, fmt: str, path: Union[str, Path]) -> Path:
    """
    Write a RoutingTrace or TrainReport as CSV or JSON

    Raises:
        ExportError: unknown format or I/O failure (message names the path)
    """
    path = Path(path)
    fmt = fmt.lower()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            obj.to_frame().to_csv(path, index=False, float_format=f"%.{settings.float_digits}g")
        elif fmt == "json":
            path.write_text(render_json(obj.to_dict()), encoding="utf-8")
        else:
            raise ExportError(f"Unsupported export format '{fmt}'", path)
    except OSError as e:
        raise ExportError(f"Could not write {fmt.upper()} ({e.strerror})", path) from e

    logger.info(f"Exported {type(obj).__name__} to {path}")
    return path


def _split(cell, cast) -> Tuple:
    if cell is None or (isinstance(cell, float) and np.isnan(cell)) or cell == "":
        return ()
    return tuple(cast(part) for part in str(cell).split(";"))


def load_trace(path: Union[str, Path]) -> RoutingTrace:
    """Read a trace written by ``export`` (format chosen by suffix)"""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            records = [
                RoutingRecord(
                    token_id=int(r["token_id"]),
                    layer_id=int(r["layer_id"]),
                    entropy_norm=float(r["entropy_norm"]),
                    strategy=Strategy(r["strategy"]),
                    selected=tuple(int(i) for i in r["selected"]),
                    weights=tuple(float(w) for w in r["weights"]),
                    argmax_expert=int(r["argmax_expert"]),
                    label=int(r.get("label", -1)),
                )
                for r in data["records"]
            ]
            return RoutingTrace(records=records, n_experts=int(data["n_experts"]), config=data.get("config", {}))

        frame = pd.read_csv(
            path,
            float_precision="round_trip",
            dtype={"weights": str, "selected": str, "strategy": str},
            keep_default_na=False,
        )
    except (OSError, ValueError, KeyError) as e:
        raise ExportError(f"Could not read trace ({e})", path) from e

    records = [
        RoutingRecord(
            token_id=int(row.token_id),
            layer_id=int(row.layer_id),
            entropy_norm=float(row.entropy_norm),
            strategy=Strategy(row.strategy),
            selected=_split(row.selected, int),
            weights=_split(row.weights, float),
            argmax_expert=int(row.argmax_expert),
            label=int(row.label),
        )
        for row in frame.itertuples(index=False)
    ]
    n_experts = max((len(r.weights) for r in records), default=0)
    return RoutingTrace(records=records, n_experts=n_experts)
