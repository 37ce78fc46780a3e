"""
Logging setup for the VFS laboratory.

Console lines carry short bracket tags ([i], [!], [.]) instead of level names.
"""

import logging
import os
from typing import Optional

LOGGER_NAME = "vfs_lab"

_TAGS = {
    logging.DEBUG: "[.]",
    logging.INFO: "[i]",
    logging.WARNING: "[!]",
    logging.ERROR: "[!]",
    logging.CRITICAL: "[!]",
}


class TagFormatter(logging.Formatter):
    """Formats records as '<tag> message'."""

    def format(self, record: logging.LogRecord) -> str:
        tag = _TAGS.get(record.levelno, "[i]")
        return f"{tag} {record.getMessage()}"


def get_logger(name: str = "") -> logging.Logger:
    """Return a logger inside the package hierarchy."""
    if not name or name == LOGGER_NAME:
        return logging.getLogger(LOGGER_NAME)
    if name.startswith(LOGGER_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{LOGGER_NAME}.{name}")


def setup_logging(verbose: bool = True, log_file: Optional[str] = None) -> logging.Logger:
    """Configure console (and optionally file) output for the package logger.

    Args:
        verbose: Show info-level lines on the console; warnings only otherwise
        log_file: Optional path of a file receiving every record at debug level

    Returns:
        The configured package logger
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)

    env_level = os.getenv("VFS_LOG_LEVEL")
    console_level = logging.INFO if verbose else logging.WARNING
    if env_level:
        console_level = logging.getLevelName(env_level.upper())
        if not isinstance(console_level, int):
            console_level = logging.INFO

    for handler in list(logger.handlers):
        if getattr(handler, "_vfs_console", False):
            logger.removeHandler(handler)
    console = logging.StreamHandler()
    console.setLevel(console_level)
    console.setFormatter(TagFormatter())
    console._vfs_console = True
    logger.addHandler(console)

    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


def remove_file_handlers(logger: Optional[logging.Logger] = None) -> None:
    """Detach and close file handlers added for a run directory."""
    logger = logger or logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler):
            logger.removeHandler(handler)
            handler.close()
