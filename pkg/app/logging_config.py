"""
Module for configuring the workbench's logging system.

This module provides a centralized function to set up the root logger and a
factory for the line-oriented training metrics log, which is kept free of
timestamps so identical runs produce identical files.
"""
import logging
import sys
from pathlib import Path
from typing import Union

METRICS_LOGGER_NAME = "app.metrics"


def setup_logging(level: str = "INFO") -> None:
    """
    Configures the root logger for the application.
    Sets up basic logging to standard output with a predefined format.
    Args:
        level: Name of the log level, e.g. "INFO" or "DEBUG".
    """
    logging.basicConfig(
        level=getattr(logging, level.strip().upper(), logging.INFO),
        format="%(asctime)s - [%(levelname)s] - %(name)s - %(message)s",
        stream=sys.stdout,
    )


def get_metrics_logger(path: Union[str, Path], run_name: str = "run") -> logging.Logger:
    """
    Returns a logger that appends one plain-text record per call to `path`.
    Args:
        path: File that receives the metrics records.
        run_name: Suffix distinguishing concurrent metrics loggers.
    Returns:
        logging.Logger: A non-propagating logger with a message-only file handler.
    """
    metrics_path = Path(path)
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger(f"{METRICS_LOGGER_NAME}.{run_name}")
    logger.setLevel(logging.INFO)
    logger.propagate = False
    close_metrics_logger(logger)
    handler = logging.FileHandler(metrics_path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    return logger


def close_metrics_logger(logger: logging.Logger) -> None:
    """Flushes and detaches every handler of a metrics logger."""
    for handler in list(logger.handlers):
        handler.flush()
        handler.close()
        logger.removeHandler(handler)
