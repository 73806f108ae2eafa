"""Trajsim - learned trajectory similarity CLI."""

__version__ = "0.1.0"

from trajsim.cli import cli, main

__all__ = ["cli", "main", "__version__"]
