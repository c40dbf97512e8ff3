"""Error handling utilities for the pbmharvest CLI."""

from functools import wraps
from typing import Callable, ParamSpec

from rich.console import Console
from rich.markup import escape

from ..exceptions import ConfigError, HarvestError

P = ParamSpec("P")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

err_console = Console(stderr=True)

# Config fields whose flag is not just --<field with dashes>.
FLAG_NAMES = {
    "M": "-M",
    "B": "--B",
    "traffic": "--impressions-per-ranker",
    "swap_k": "--swap-k",
}


def flag_name(field: str) -> str:
    return FLAG_NAMES.get(field, "--" + field.replace("_", "-"))


def print_error(message: str, diagnostics=()) -> None:
    err_console.print(f"[bold red]Error:[/bold red] {escape(message)}", highlight=False)
    for line in diagnostics:
        err_console.print(f"  [dim]-[/dim] {escape(line)}", highlight=False)


def wrap_harvest_error(func: Callable[P, int]) -> Callable[P, int]:
    """Decorator turning library errors into CLI exit codes.

    ConfigError exits with 2 and names the offending flag; any other
    HarvestError or an unreadable/unwritable path exits with 1.
    """
    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> int:
        try:
            result = func(*args, **kwargs)
        except ConfigError as e:
            print_error(f"{flag_name(e.field)}: {e}", e.diagnostics)
            return EXIT_USAGE
        except HarvestError as e:
            print_error(str(e), e.diagnostics)
            return EXIT_FAILURE
        except OSError as e:
            print_error(f"{e.filename or ''}: {e.strerror or e}".lstrip(": "))
            return EXIT_FAILURE
        return EXIT_OK if result is None else result

    return wrapper
