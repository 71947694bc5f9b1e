"""
Logging setup shared by every module.
"""

import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

_configured = False


def setup_logging(verbose: bool = False, level: str = None) -> None:
    """Configure the root logger once; `verbose` forces DEBUG"""
    global _configured
    if verbose:
        resolved = logging.DEBUG
    else:
        resolved = getattr(logging, (level or "INFO").upper(), logging.INFO)

    root = logging.getLogger()
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(handler)
        _configured = True
    root.setLevel(resolved)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def progress_enabled() -> bool:
    """tqdm bars are only shown when the root logger is at DEBUG"""
    return logging.getLogger().isEnabledFor(logging.DEBUG)
