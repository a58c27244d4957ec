"""
Exception hierarchy shared by the library and the CLI.

Library code only raises; ``cli.py`` maps each family onto an exit code.
"""

from __future__ import annotations

from typing import Optional


class GmiError(Exception):
    """Root of every error raised by gmi_tool."""


class ConfigError(GmiError, ValueError):
    pass


class DataError(GmiError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path: str, line_number: int, reason: str):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number


class QuotaError(DataError):
    def __init__(self, requested: float, max_ratio: float):
        super().__init__(
            f"cannot remove {requested:.3f} of the edges while keeping components "
            f"connected; max achievable ratio is {max_ratio:.4f}"
        )
        self.requested = requested
        self.max_ratio = max_ratio


class CheckpointError(DataError):
    pass


class DimensionError(GmiError, ValueError):
    pass


class DomainError(GmiError, ValueError):
    pass


class NumericalError(GmiError, ArithmeticError):
    def __init__(self, message: str, epoch: Optional[int] = None, term: Optional[str] = None):
        details = []
        if epoch is not None:
            details.append(f"epoch={epoch}")
        if term is not None:
            details.append(f"term={term}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(message + suffix)
        self.epoch = epoch
        self.term = term


class PropertyFailure(GmiError, AssertionError):
    def __init__(self, prop: str, seed: int, detail: str = ""):
        message = f"property '{prop}' failed (reproduce with seed {seed})"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.prop = prop
        self.seed = seed
