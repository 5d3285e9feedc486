"""
Exception hierarchy shared by the library and the CLI
"""
from pathlib import Path
from typing import Optional


class MoleError(Exception):
    """Base class for every error raised by the toolkit"""


class ShapeError(MoleError):
    """Operand dimensions do not agree"""


class NumericError(MoleError):
    """A value that must be finite is not"""


class DomainError(MoleError):
    """Input outside the mathematical domain (bad distribution, q <= 0, N too small)"""


class ConfigError(MoleError):
    """Invalid configuration, selection parameter or grid value"""


class UsageError(MoleError):
    """Operation called in a state where it cannot run (empty trace, stale cache, bad literal)"""


class DivergenceError(MoleError):
    """
    Training produced a non-finite loss

    The partial report up to and including the failing step is kept on
    ``report`` so callers can persist a diagnostic record.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ExportError(MoleError):
    """Reading or writing an artifact failed"""

    def __init__(self, message: str, path: Optional[Path] = None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
