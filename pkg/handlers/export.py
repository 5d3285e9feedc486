"""
Export Handler - convert a saved report or trace between CSV and JSON
"""
import argparse
import json
import logging
from pathlib import Path

from errors import ExportError
from services.metrics import export, load_trace
from services.trainer import TrainReport
from utils.decorators import EXIT_OK, handle_errors, log_handler

logger = logging.getLogger(__name__)


def load_artifact(path: Path):
    """
    Load a report (JSON with ``steps``) or a routing trace (CSV, or JSON
    with ``records``)
    """
    path = Path(path)
    if not path.is_file():
        raise ExportError("Input file not found", path)
    if path.suffix.lower() == ".csv":
        return load_trace(path)

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"Could not read input ({e})", path) from e
    if isinstance(data, dict) and "steps" in data:
        return TrainReport.from_dict(data)
    if isinstance(data, dict) and "records" in data:
        return load_trace(path)
    raise ExportError("Input is neither a report nor a routing trace", path)


@log_handler
@handle_errors
def cmd_export(args: argparse.Namespace) -> int:
    source = Path(args.source)
    fmt = args.format.lower()
    target = Path(args.out) if args.out else source.with_suffix(f".{fmt}")
    if target.resolve() == source.resolve():
        raise ExportError("Refusing to overwrite the input file", target)

    artifact = load_artifact(source)
    export(artifact, fmt, target)
    print(f"{type(artifact).__name__} -> {target}")
    return EXIT_OK
