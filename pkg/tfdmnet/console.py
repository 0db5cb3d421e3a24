"""Terminal output helpers: colored human messages on stderr, key=value results on stdout."""

import sys


class Colors:
    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"
    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    CYAN = "\033[36m"

    @classmethod
    def disable(cls):
        for attr in dir(cls):
            if not attr.startswith('_') and attr != 'disable':
                setattr(cls, attr, "")


# Human output goes to stderr; disable colors if that is not a TTY
if not sys.stderr.isatty():
    Colors.disable()


def print_error(msg: str):
    print(f"{Colors.RED}error:{Colors.RESET} {msg}", file=sys.stderr)


def print_success(msg: str):
    print(f"{Colors.GREEN}✓{Colors.RESET} {msg}", file=sys.stderr)


def print_info(msg: str):
    print(f"{Colors.CYAN}→{Colors.RESET} {msg}", file=sys.stderr)


def print_warning(msg: str):
    print(f"{Colors.YELLOW}warning:{Colors.RESET} {msg}", file=sys.stderr)


def print_failure(msg: str):
    print(f"{Colors.RED}✗{Colors.RESET} {msg}", file=sys.stderr)


def emit(key: str, value) -> None:
    """One machine-parsable key=value line on stdout."""
    if isinstance(value, float):
        value = f"{value:.6g}"
    print(f"{key}={value}", flush=True)
