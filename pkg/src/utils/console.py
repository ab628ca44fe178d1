"""Console logging for the command-line front end."""
import logging

from rich.console import Console
from rich.logging import RichHandler

stderr_console = Console(stderr=True)


def setup_logging(level: str = "INFO") -> None:
    """Route all log records to stderr through rich; stdout stays reserved for report paths."""
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=stderr_console, rich_tracebacks=True)],
        force=True,
    )
