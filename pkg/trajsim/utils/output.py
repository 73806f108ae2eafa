"""Output files and terminal display helpers."""

import csv
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Mapping, Sequence, Union

from rich.table import Table

from trajsim.utils.console import console


def ensure_output_dir(path: Union[str, Path]) -> Path:
    """Create the parent directory of an output file and return the file path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def sibling(path: Union[str, Path], suffix: str) -> Path:
    """``run.tsps`` + ``.meta.yml`` -> ``run.tsps.meta.yml``."""
    path = Path(path)
    return path.with_name(path.name + suffix)


@contextmanager
def atomic_write(path: Union[str, Path], binary: bool = False) -> Iterator[Any]:
    """Write to a temporary sibling file and rename it over ``path`` on success.

    On any exception the temporary file is removed and ``path`` is untouched.
    """
    path = ensure_output_dir(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        if binary:
            f = os.fdopen(fd, "wb")
        else:
            f = os.fdopen(fd, "w", encoding="utf-8", newline="")
        with f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with atomic_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: Union[str, Path], payload: Mapping[str, Any]) -> None:
    with atomic_write(path) as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def display_summary(title: str, rows: Mapping[str, Any]) -> None:
    """Two-column rich table of labelled values."""
    table = Table(title=title)
    table.add_column("Item", style="cyan")
    table.add_column("Value", style="green")
    for label, value in rows.items():
        table.add_row(label, f"{value:.4f}" if isinstance(value, float) else str(value))
    console.print(table)


def display_metrics(report: Dict[str, float], title: str = "Retrieval Metrics") -> None:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green", justify="right")
    for name, value in report.items():
        table.add_row(name, f"{value:.4f}")
    console.print(table)


def create_progress_bar():
    """Progress context manager with spinner, bar, counts and timing columns.

    Returns:
        A ``rich.progress.Progress`` bound to the shared console.
    """
    from rich.progress import (
        BarColumn,
        MofNCompleteColumn,
        Progress,
        SpinnerColumn,
        TextColumn,
        TimeElapsedColumn,
        TimeRemainingColumn,
    )

    return Progress(
        SpinnerColumn(spinner_name="line"),  # ASCII-safe spinner for Windows
        TextColumn("[bold blue]{task.description}"),
        BarColumn(complete_style="green", finished_style="bold green"),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        TimeRemainingColumn(),
        console=console,
        transient=False,
    )
