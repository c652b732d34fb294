"""
Logging configuration for chemoreduce.
Console output only by default; file logging is opt-in to keep long sweeps from
leaving log files behind.
"""
import os
import logging
import sys
from typing import Optional

LOGGER_NAME = "chemoreduce"


def configure_logging(
    level: Optional[str] = None,
    enable_file_logging: bool = False,
    log_file: str = "chemoreduce.log"
) -> logging.Logger:
    """
    Configure logging for the package.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        enable_file_logging: Whether to also log to a file (requires ENABLE_FILE_LOGGING=1)
        log_file: Log file name if file logging is enabled

    Returns:
        Configured logger instance
    """
    if level is None:
        level = os.getenv("LOG_LEVEL", "INFO")

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    # Reconfiguration replaces handlers instead of stacking them
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    console_handler.setFormatter(console_format)
    logger.addHandler(console_handler)

    if enable_file_logging and os.getenv("ENABLE_FILE_LOGGING") == "1":
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(console_format)
        logger.addHandler(file_handler)
        logger.warning(f"File logging enabled: {log_file}")

    logger.propagate = False

    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Get the package logger, or a dotted child of it."""
    root = logging.getLogger(LOGGER_NAME)
    if not root.handlers:
        configure_logging()
    if not name:
        return root
    if name.startswith(LOGGER_NAME + "."):
        return logging.getLogger(name)
    return root.getChild(name)

