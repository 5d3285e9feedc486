"""
mole-lab - entropy-guided routing for mixtures of LoRA experts
Main entry point
"""
import argparse
import logging
import sys
from typing import List, Optional

from config import settings
from database import init_db
from handlers import cmd_ablate, cmd_export, cmd_gradcheck, cmd_route, cmd_train
from models import LAYER_PRESETS, METHOD_PRESETS, RoutingConfig, RoutingMode

logger = logging.getLogger(__name__)


def setup_logging():
    """Log to the configured file and to stderr"""
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, settings.log_level.upper()),
        handlers=[
            logging.FileHandler(settings.log_file),
            logging.StreamHandler(sys.stderr)
        ]
    )


def _add_experiment_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON experiment config (see presets/default.json)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. routing.keep_top_k=3 (repeatable)")
    parser.add_argument("--seed", type=int, help="seed for both the task and the training run")
    parser.add_argument("--method", choices=sorted(METHOD_PRESETS),
                        help="routing/loss preset applied before --set")
    parser.add_argument("--layer-preset", choices=sorted(LAYER_PRESETS),
                        help="rank/lora_alpha preset applied before --set")
    parser.add_argument("--out", help="output root (default: $MOLE_OUTPUT_DIR or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mole-lab",
        description="Entropy-guided hybrid routing for mixtures of LoRA experts",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train on the synthetic task")
    _add_experiment_flags(train)
    train.set_defaults(handler=cmd_train)

    defaults = RoutingConfig()
    route = commands.add_parser("route", help="route one probability vector")
    route.add_argument("distribution", help="comma-separated probabilities, e.g. 0.7,0.2,0.1")
    route.add_argument("--q", type=float, default=defaults.entropic_index, help="entropic index")
    route.add_argument("--p", dest="top_p", type=float, default=defaults.top_p, help="top-p mass")
    route.add_argument("--k", dest="keep_top_k", type=int, default=defaults.keep_top_k,
                       help="minimum experts kept")
    route.add_argument("--threshold", type=float, default=defaults.entropy_threshold,
                       help="normalised entropy above which routing is soft")
    route.add_argument("--mode", choices=[m.value for m in RoutingMode], default=defaults.mode.value)
    route.set_defaults(handler=cmd_route)

    ablate = commands.add_parser("ablate", help="sweep a parameter grid")
    _add_experiment_flags(ablate)
    ablate.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2,...",
                        help="grid axis, e.g. q=1.0,1.1,1.2 (repeatable)")
    ablate.add_argument("--grid", action="append", default=[], metavar="PRESET",
                        help="JSON grid file, e.g. presets/grid_beta.json (repeatable)")
    ablate.add_argument("--workers", type=int, help="parallel processes (default: $MOLE_ABLATION_WORKERS)")
    ablate.set_defaults(handler=cmd_ablate)

    gradcheck = commands.add_parser("gradcheck", help="finite-difference gradient check")
    _add_experiment_flags(gradcheck)
    gradcheck.add_argument("--checkpoint", help="check a saved layer instead of a fresh one")
    gradcheck.set_defaults(handler=cmd_gradcheck)

    export = commands.add_parser("export", help="convert a report or trace to CSV/JSON")
    export.add_argument("source", help="report.json, trace.csv or trace.json")
    export.add_argument("--format", choices=["csv", "json"], required=True)
    export.add_argument("--out", help="target file (default: source with the new suffix)")
    export.set_defaults(handler=cmd_export)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse the command line and dispatch

    Returns:
        Exit code: 0 ok, 1 check failed or unexpected error, 2 bad
        config or usage, 3 training diverged
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging()
    if args.command in ("train", "ablate"):
        init_db()
    return args.handler(args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        sys.exit(130)
