"""Singleton console instance and logging setup for consistent output."""

import logging

from rich.console import Console
from rich.logging import RichHandler

# Singleton console instance with UTF-8 encoding for Windows
console = Console(legacy_windows=False)


def setup_logging(verbose: bool = False) -> None:
    """Route the ``trajsim`` logger through the shared rich console."""
    logger = logging.getLogger("trajsim")
    logger.handlers.clear()
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


__all__ = ["console", "setup_logging"]
