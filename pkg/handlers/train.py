"""
Train Handler - run one experiment and write its report, trace and checkpoint
"""
import argparse
import logging

from database import register_run
from errors import DivergenceError
from handlers.common import output_root, resolve_config
from services.metrics import export, strategy_mix
from services.storage_service import storage_service
from services.trainer import run_experiment
from utils.decorators import EXIT_OK, handle_errors, log_handler
from utils.formatters import format_mix

logger = logging.getLogger(__name__)


@log_handler
@handle_errors
def cmd_train(args: argparse.Namespace) -> int:
    """
    Train on the synthetic task

    Writes <out>/<run_name>/{report.json, trace.csv, checkpoint.npz} and
    registers the run. A diverged run still writes its partial report.
    """
    config = resolve_config(args)
    run_dir = storage_service.run_dir(config.output.run_name, output_root(args))
    report_path = run_dir / config.output.report
    method = getattr(args, "method", None)

    try:
        layer, _, report = run_experiment(config)
    except DivergenceError as e:
        if e.report is not None:
            e.report.config = config.model_dump(mode="json")
            storage_service.write_json(e.report.to_dict(), report_path)
        register_run(
            run_name=config.output.run_name,
            command="train",
            seed=config.train.seed,
            config=config.model_dump(mode="json"),
            final_loss=None,
            final_entropy=None,
            report_path=str(report_path),
            status="diverged",
            method=method,
        )
        raise

    # Relative name keeps the report identical wherever the run is written
    report.trace_file = config.output.trace
    export(report.trace, "csv", run_dir / config.output.trace)
    storage_service.write_json(report.to_dict(), report_path)
    storage_service.save_checkpoint(layer, run_dir / config.output.checkpoint)

    final_loss = report.steps[-1].total_loss
    register_run(
        run_name=config.output.run_name,
        command="train",
        seed=config.train.seed,
        config=config.model_dump(mode="json"),
        final_loss=final_loss,
        final_entropy=report.final_mean_entropy,
        report_path=str(report_path),
        method=method,
    )

    print(f"run:          {run_dir}")
    print(f"final loss:   {final_loss:.6f}")
    print(f"entropy:      {report.initial_mean_entropy:.4f} -> {report.final_mean_entropy:.4f}")
    print(f"strategies:   {format_mix(strategy_mix(report.trace))}")
    return EXIT_OK
