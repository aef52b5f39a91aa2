"""
Handlers Package
Command families of the edgenav CLI
"""

from .data_handler import data_handler
from .detector_handler import detector_handler
from .navigation_handler import navigation_handler
from .reports_handler import reports_handler

# Order defines the subcommand order in --help
handlers = {
    "data": data_handler,
    "detector": detector_handler,
    "navigation": navigation_handler,
    "reports": reports_handler,
}


def get_all_handlers():
    """Get all available handler instances"""
    return {k: v for k, v in handlers.items() if v is not None}


def register_all(subparsers, common) -> None:
    """Attach every handler's subcommands to the CLI parser"""
    for handler in get_all_handlers().values():
        handler.register(subparsers, common)


__all__ = [
    "data_handler",
    "detector_handler",
    "navigation_handler",
    "reports_handler",
    "handlers",
    "get_all_handlers",
    "register_all",
]
