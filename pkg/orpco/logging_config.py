"""Logging configuration for orpco."""

import logging
import sys
import time
from contextlib import contextmanager
from typing import Dict, Iterator, Optional

# Package logger
_PACKAGE_NAME = "orpco"

_DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(
    level: int = logging.INFO,
    format_string: Optional[str] = None,
    handler: Optional[logging.Handler] = None,
    log_file: Optional[str] = None,
) -> logging.Logger:
    """
    Configure logging for the orpco package.

    Args:
        level: Logging level (e.g., logging.DEBUG, logging.INFO)
        format_string: Custom format string. If None, uses default format.
        handler: Custom handler. If None, uses StreamHandler to stderr.
        log_file: Optional path; adds a FileHandler next to the main handler.
            Long training runs use this to keep per-epoch loss lines.

    Returns:
        The configured package logger.

    Example:
        from orpco import setup_logging
        import logging

        setup_logging(level=logging.DEBUG, log_file="runs/train.log")
    """
    logger = logging.getLogger(_PACKAGE_NAME)
    logger.setLevel(level)

    # Remove existing handlers to avoid duplicates
    for existing in list(logger.handlers):
        existing.close()
    logger.handlers.clear()

    formatter = logging.Formatter(format_string or _DEFAULT_FORMAT)

    handlers = [handler if handler is not None else logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    for h in handlers:
        h.setLevel(level)
        h.setFormatter(formatter)
        logger.addHandler(h)

    logger.propagate = False
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get a logger for a module within the package.

    Args:
        name: Module name (e.g., "dynamics_cgan", "reward_eval").
              If None, returns the package root logger.
    """
    if name is None:
        return logging.getLogger(_PACKAGE_NAME)
    return logging.getLogger(f"{_PACKAGE_NAME}.{name}")


@contextmanager
def stage_timer(
    stage: str,
    timings: Optional[Dict[str, float]] = None,
    logger: Optional[logging.Logger] = None,
) -> Iterator[None]:
    """
    Log the start and end of a pipeline stage and record its wall-clock time.

    Args:
        stage: Stage name, used as the key in ``timings``.
        timings: Dict receiving ``{stage: seconds}``; repeated stages accumulate.
        logger: Logger to report to; defaults to the package logger.
    """
    log = logger or get_logger("stages")
    log.info(f"[{stage}] started")
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + elapsed
        log.info(f"[{stage}] finished in {elapsed:.2f}s")
