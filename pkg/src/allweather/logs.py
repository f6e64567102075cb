"""Logging setup: stderr, an optional main log file and an optional error log."""

from __future__ import annotations

import logging
import sys
from datetime import datetime

from allweather.config.models import LoggingConfig

LOGGER_NAME = "allweather"

LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}

BANNER = "=" * 60


class ConsoleFilter(logging.Filter):
    """Drop records logged with ``extra={"file_only": True}``."""

    def filter(self, record: logging.LogRecord) -> bool:
        return not getattr(record, "file_only", False)


class ErrorBannerFormatter(logging.Formatter):
    """One framed block per error: timestamp, message, exception and traceback."""

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.fromtimestamp(record.created).isoformat()
        lines = [f"\n{BANNER}", f"[{timestamp}] ERROR: {record.getMessage()}"]
        if record.exc_info and record.exc_info[1] is not None:
            exc = record.exc_info[1]
            lines.append(f"Exception: {type(exc).__name__}: {exc}")
            lines.append("Traceback:")
            lines.append(self.formatException(record.exc_info))
        lines.append(f"{BANNER}\n")
        return "\n".join(lines)


def setup_logging(config: LoggingConfig | None = None, verbose: bool = False) -> logging.Logger:
    """Configure the ``allweather`` logger; safe to call repeatedly."""
    config = config or LoggingConfig()
    level = logging.DEBUG if verbose else LEVELS[config.level]

    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(logging.DEBUG)

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    console.addFilter(ConsoleFilter())
    logger.addHandler(console)

    log_path = config.get_log_path()
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        main = logging.FileHandler(log_path)
        main.setLevel(level)
        main.setFormatter(logging.Formatter("[%(asctime)s] %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(main)

    error_path = config.get_error_log_path()
    if error_path is not None:
        error_path.parent.mkdir(parents=True, exist_ok=True)
        errors = logging.FileHandler(error_path)
        errors.setLevel(logging.ERROR)
        errors.setFormatter(ErrorBannerFormatter())
        logger.addHandler(errors)

    return logger
