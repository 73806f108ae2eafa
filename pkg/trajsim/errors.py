"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it, so click
can render library failures without extra translation.
"""

import click


class TrajsimError(click.ClickException):
    """Base class for all trajsim failures."""

    exit_code = 1


class ConfigError(TrajsimError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(TrajsimError, ValueError):
    """Malformed input data or an inconsistent data file."""

    exit_code = 3


class NumericError(TrajsimError, ArithmeticError):
    """Non-finite values or an invalid numeric contract."""

    exit_code = 4


class ShapeError(NumericError, ValueError):
    """Tensor shapes do not conform for the requested op."""
