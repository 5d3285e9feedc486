"""
Decorators for command handlers - logging and error-to-exit-code mapping
"""
import functools
import logging
import sys
from typing import Callable

from pydantic import ValidationError

from errors import ConfigError, DivergenceError, DomainError, ExportError, ShapeError, UsageError

logger = logging.getLogger(__name__)

# Stable exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def handle_errors(func: Callable):
    """
    Turn exceptions into exit codes and a one-line message on stderr

    Config/usage problems -> 2, divergence -> 3, anything unexpected -> 1.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)

        except (ConfigError, UsageError, DomainError, ShapeError, ValidationError) as e:
            logger.error(f"{func.__name__}: {e}")
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE

        except DivergenceError as e:
            logger.error(f"{func.__name__}: training diverged: {e}")
            print(f"error: training diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGED

        except ExportError as e:
            logger.error(f"{func.__name__}: {e}")
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE

        except Exception as e:
            logger.error(f"Unexpected error in {func.__name__}: {e}", exc_info=True)
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CHECK_FAILED

    return wrapper


def log_handler(func: Callable):
    """Decorator to log handler execution"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        handler_name = func.__name__
        logger.info(f"Command {handler_name} started")

        result = func(*args, **kwargs)

        logger.info(f"Command {handler_name} finished with exit code {result}")
        return result

    return wrapper
