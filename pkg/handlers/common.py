"""
Shared helpers for command handlers
"""
import argparse
import logging
from pathlib import Path

from config import settings
from errors import UsageError
from models import ExperimentConfig, load_config
from utils.validators import parse_overrides

logger = logging.getLogger(__name__)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Load --config, apply --method, --layer-preset, --set and --seed, then validate

    ``--seed`` seeds both the task generator and the training run.
    """
    overrides, error = parse_overrides(getattr(args, "set", None))
    if error:
        raise UsageError(error)

    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides["train.seed"] = seed
        overrides["task.seed"] = seed

    config = load_config(
        getattr(args, "config", None),
        overrides,
        method=getattr(args, "method", None),
        layer_preset=getattr(args, "layer_preset", None),
    )
    logger.debug(f"Resolved config: {config.model_dump(mode='json')}")
    return config


def output_root(args: argparse.Namespace) -> Path:
    """--out, else MOLE_OUTPUT_DIR, else ./runs"""
    out = getattr(args, "out", None)
    return Path(out) if out else settings.output_dir
