"""
Gradient Check Handler - analytic vs. central-difference gradients
"""
import argparse
import logging
from pathlib import Path

from errors import ShapeError
from handlers.common import resolve_config
from services.mole import init_layer
from services.storage_service import storage_service
from services.trainer import batch_rng, generate_task, grad_check, sample_batch
from utils.decorators import EXIT_CHECK_FAILED, EXIT_OK, handle_errors, log_handler
from utils.formatters import format_gradcheck

logger = logging.getLogger(__name__)


@log_handler
@handle_errors
def cmd_gradcheck(args: argparse.Namespace) -> int:
    """
    Check every trainable entry on one batch of the configured task

    Exit code 0 iff the max scaled error is below the tolerance, else 1.
    """
    config = resolve_config(args)

    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint:
        layer = storage_service.load_checkpoint(Path(checkpoint))
        if (layer.input_dim, layer.output_dim) != (config.task.input_dim, config.task.output_dim):
            raise ShapeError(
                f"checkpoint maps {layer.input_dim}->{layer.output_dim}, "
                f"task maps {config.task.input_dim}->{config.task.output_dim}"
            )
        if config.train.routing.n_experts == layer.n_experts:
            layer.cfg = config.train.routing
    else:
        layer = init_layer(config.layer, config.train.routing, config.train.seed)

    data = generate_task(config.task)
    idx = sample_batch(batch_rng(config.train), len(data), config.gradcheck.batch_size)
    report = grad_check(layer, (data.inputs[idx], data.targets[idx]), config.train.loss, config.gradcheck.eps)

    tolerance = config.gradcheck.tolerance
    print(format_gradcheck(report, tolerance))
    return EXIT_OK if report.passed(tolerance) else EXIT_CHECK_FAILED
