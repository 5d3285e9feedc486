"""
Ablate Handler - sweep a parameter grid and write a summary table
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from config import settings
from database import register_run
from errors import ConfigError, UsageError
from handlers.common import output_root, resolve_config
from models import Strategy
from services.metrics import avg_activated, expert_consistency, strategy_mix
from services.storage_service import storage_service
from services.trainer import AblationResult, ablate
from utils.decorators import EXIT_DIVERGED, EXIT_OK, handle_errors, log_handler
from utils.validators import parse_axis

logger = logging.getLogger(__name__)

SUMMARY_METRICS = (
    ["initial_mean_entropy", "final_mean_entropy"]
    + [f"mix_{strategy.value}" for strategy in Strategy]
    + ["avg_activated", "expert_consistency", "final_round_mean", "final_round_std"]
)


def load_grid_file(path: Path) -> Dict[str, List[Any]]:
    """Read a preset grid: ``{"axes": {"beta": [0.0001, ...]}}``"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Grid file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Grid file {path} is not valid JSON: {e}") from e

    axes = data.get("axes") if isinstance(data, dict) else None
    if not isinstance(axes, dict) or not axes:
        raise ConfigError(f"Grid file {path} must hold a non-empty 'axes' object")
    for name, values in axes.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"Grid file {path}: axis '{name}' must be a non-empty list")
    return axes


def collect_grid(grid_files: Sequence[str], axes: Sequence[str]) -> Dict[str, List[Any]]:
    """
    Merge --grid files and --axis flags; later definitions of an axis win

    No axes at all means a single run of the base config.
    """
    grid: Dict[str, List[Any]] = {}
    for path in grid_files or []:
        grid.update(load_grid_file(Path(path)))
    for text in axes or []:
        parsed, error = parse_axis(text)
        if error:
            raise UsageError(error)
        name, values = parsed
        grid[name] = values
    return grid


def summary_row(result: AblationResult) -> Dict[str, Any]:
    """One summary-table row per grid point"""
    report = result.report
    row: Dict[str, Any] = dict(result.point)
    row["seed"] = result.config.train.seed
    row["status"] = report.status
    row["final_loss"] = report.steps[-1].total_loss if report.steps else float("nan")
    if report.status != "completed":
        # no final trace or rounds: the run stopped early
        for key in SUMMARY_METRICS:
            row[key] = float("nan")
        return row

    row["initial_mean_entropy"] = report.initial_mean_entropy
    row["final_mean_entropy"] = report.final_mean_entropy

    mix = strategy_mix(report.trace)
    for strategy in Strategy:
        row[f"mix_{strategy.value}"] = mix.get(strategy.value, 0.0)

    activated = avg_activated(report.trace)
    row["avg_activated"] = float(np.mean(list(activated.values())))
    row["expert_consistency"] = expert_consistency(report.trace)

    full_rounds = [r for r in report.rounds if not r.stat.partial] or report.rounds
    row["final_round_mean"] = full_rounds[-1].stat.mean
    row["final_round_std"] = full_rounds[-1].stat.std
    return row


@log_handler
@handle_errors
def cmd_ablate(args: argparse.Namespace) -> int:
    """
    Run one training per grid point

    Writes <out>/<run_name>/summary.csv plus point_NNN.json reports and
    registers every point. Diverged points are written and registered too;
    the command then exits with the divergence code.
    """
    base = resolve_config(args)
    grid = collect_grid(getattr(args, "grid", None), getattr(args, "axis", None))
    workers = args.workers if getattr(args, "workers", None) else settings.ablation_workers

    results = ablate(base, grid, workers=workers)

    run_dir = storage_service.run_dir(base.output.run_name, output_root(args))
    rows = []
    for index, result in enumerate(results):
        report_path = run_dir / f"point_{index:03d}.json"
        storage_service.write_json(result.report.to_dict(), report_path)
        row = summary_row(result)
        rows.append(row)
        completed = result.report.status == "completed"
        register_run(
            run_name=base.output.run_name,
            command="ablate",
            seed=result.config.train.seed,
            config=result.config.model_dump(mode="json"),
            final_loss=row["final_loss"] if completed else None,
            final_entropy=row["final_mean_entropy"] if completed else None,
            report_path=str(report_path),
            status=result.report.status,
            method=getattr(args, "method", None),
            grid_point=result.point,
        )

    frame = pd.DataFrame(rows)
    summary_path = run_dir / base.output.summary
    frame.to_csv(summary_path, index=False, float_format=f"%.{settings.float_digits}g")
    logger.info(f"Ablation summary ({len(rows)} rows) written to {summary_path}")

    columns = list(grid) + ["status", "final_loss", "final_mean_entropy", "avg_activated"]
    print(frame[columns].to_string(index=False))
    print(f"\nsummary: {summary_path}")

    diverged = [row for row in rows if row["status"] != "completed"]
    if diverged:
        logger.error(f"{len(diverged)} of {len(rows)} grid point(s) diverged")
        print(f"error: {len(diverged)} of {len(rows)} grid point(s) diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK
