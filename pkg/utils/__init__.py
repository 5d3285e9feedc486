"""Utils package"""
from utils.decorators import (
    EXIT_CHECK_FAILED,
    EXIT_DIVERGED,
    EXIT_OK,
    EXIT_USAGE,
    handle_errors,
    log_handler,
)
from utils.validators import *

__all__ = [
    'EXIT_CHECK_FAILED',
    'EXIT_DIVERGED',
    'EXIT_OK',
    'EXIT_USAGE',
    'handle_errors',
    'log_handler',
]
