"""Utility functions and helpers."""

from trajsim.utils.console import console, setup_logging
from trajsim.utils.output import (
    atomic_write,
    create_progress_bar,
    display_metrics,
    display_summary,
    ensure_output_dir,
    sibling,
    write_csv,
    write_json,
)

__all__ = [
    "atomic_write",
    "console",
    "create_progress_bar",
    "display_metrics",
    "display_summary",
    "ensure_output_dir",
    "setup_logging",
    "sibling",
    "write_csv",
    "write_json",
]
