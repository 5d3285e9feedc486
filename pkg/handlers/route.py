"""
Route Handler - route a single distribution literal and print the decision
"""
import argparse
import logging

from pydantic import ValidationError

from errors import ConfigError, UsageError
from models import RoutingConfig
from services.routing import route_distribution
from utils.decorators import EXIT_OK, handle_errors, log_handler
from utils.formatters import format_decision
from utils.validators import parse_distribution

logger = logging.getLogger(__name__)


@log_handler
@handle_errors
def cmd_route(args: argparse.Namespace) -> int:
    dist, error = parse_distribution(args.distribution)
    if error:
        raise UsageError(error)

    try:
        cfg = RoutingConfig(
            n_experts=dist.size,
            top_p=args.top_p,
            keep_top_k=args.keep_top_k,
            entropy_threshold=args.threshold,
            entropic_index=args.q,
            mode=args.mode,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid routing flags: {e}") from e

    decision = route_distribution(dist, cfg)
    print(format_decision(decision))
    return EXIT_OK
