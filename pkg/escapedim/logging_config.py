"""
Logging setup for escapedim.

Numerical modules log through `get_logger(__name__)`; the CLI calls
`setup_logging` once with the verbosity and optional log file it was given.
Console output goes to stderr so that rich tables on stdout stay clean.
"""

import logging
import sys
from pathlib import Path

PACKAGE_LOGGER = "escapedim"

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DETAILED_FORMAT = (
    "%(asctime)s - %(name)s - %(levelname)s - "
    "%(module)s.%(funcName)s:%(lineno)d - %(message)s"
)


def setup_logging(
    level: int = logging.INFO,
    log_file: Path | None = None,
    detailed: bool = False,
    logger_name: str | None = PACKAGE_LOGGER,
) -> logging.Logger:
    """
    Configure handlers for the package logger (or another named logger).

    Args:
        level: Threshold for both console and file handlers
        log_file: Optional file that receives a copy of every record
        detailed: Include module, function and line in each record
        logger_name: Logger to configure; None configures the root logger

    Returns:
        logging.Logger: The configured logger

    Examples:
        >>> logger = setup_logging(level=logging.DEBUG, detailed=True)
        >>> logger.debug("series depth chosen")
    """
    formatter = logging.Formatter(DETAILED_FORMAT if detailed else DEFAULT_FORMAT)

    logger = logging.getLogger(logger_name) if logger_name else logging.getLogger()
    logger.setLevel(level)
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    if logger_name:
        logger.propagate = False

    return logger


def level_for_verbosity(verbose: bool) -> int:
    """Map the CLI --verbose flag onto a logging level."""
    return logging.DEBUG if verbose else logging.WARNING


def get_logger(name: str) -> logging.Logger:
    """
    Return the logger for a module.

    Args:
        name: Usually __name__ of the caller, so records nest under "escapedim"

    Returns:
        logging.Logger: Logger instance
    """
    return logging.getLogger(name)


class LoggerContextManager:
    """
    Temporarily change a logger's level or attach an extra handler.

    Examples:
        >>> logger = get_logger("escapedim.comb_conformal")
        >>> with LoggerContextManager(logger, level=logging.DEBUG):
        ...     logger.debug("Newton residuals")
    """

    def __init__(
        self,
        logger: logging.Logger,
        level: int | None = None,
        handler: logging.Handler | None = None,
    ) -> None:
        self.logger = logger
        self.new_level = level
        self.handler = handler
        self.original_level = logger.level
        self.handler_added = False

    def __enter__(self) -> logging.Logger:
        if self.new_level is not None:
            self.logger.setLevel(self.new_level)
        if self.handler is not None:
            self.logger.addHandler(self.handler)
            self.handler_added = True
        return self.logger

    def __exit__(self, exc_type: object, exc_val: object, exc_tb: object) -> None:
        self.logger.setLevel(self.original_level)
        if self.handler_added and self.handler is not None:
            self.logger.removeHandler(self.handler)


def log_exception(
    logger: logging.Logger,
    exception: Exception,
    message: str = "Computation failed",
    level: int = logging.ERROR,
) -> None:
    """
    Log an exception together with its traceback.

    Args:
        logger: Logger instance to use
        exception: Exception to log
        message: Context prefix for the record
        level: Log level (default: ERROR)
    """
    logger.log(
        level,
        f"{message}: {type(exception).__name__}: {exception!s}",
        exc_info=True,
    )
