"""Logging configuration for flexpilot."""

from __future__ import annotations

import logging
import logging.handlers
from pathlib import Path

from .paths import get_state_dir

LOG_FILENAME = "flexpilot.log"

# Module-level logger
_logger: logging.Logger | None = None


def get_log_file() -> Path:
    """Current log file location (depends on FLEXPILOT_STATE_DIR)."""
    return get_state_dir() / LOG_FILENAME


def get_logger() -> logging.Logger:
    """Get or create the logger instance."""
    global _logger
    if _logger is not None:
        return _logger

    log_dir = get_state_dir()
    log_dir.mkdir(parents=True, exist_ok=True)

    _logger = logging.getLogger("flexpilot")
    _logger.setLevel(logging.DEBUG)
    _logger.propagate = False

    # Avoid duplicate handlers if called multiple times
    if not _logger.handlers:
        # File handler with rotation (1MB max, 3 backups)
        handler = logging.handlers.RotatingFileHandler(
            log_dir / LOG_FILENAME, maxBytes=1_000_000, backupCount=3, encoding="utf-8"
        )
        handler.setLevel(logging.DEBUG)

        # Format: time | stage | run | message
        formatter = logging.Formatter(
            "%(asctime)s | %(stage)-9s | %(run)-12s | %(message)s",
            datefmt="%H:%M:%S",
        )
        handler.setFormatter(formatter)
        _logger.addHandler(handler)

    return _logger


class StageLogAdapter(logging.LoggerAdapter):
    """Logger adapter that includes the pipeline stage and run id in all log messages."""

    def process(self, msg: str, kwargs: dict) -> tuple[str, dict]:
        kwargs.setdefault("extra", {})
        kwargs["extra"].setdefault("stage", self.extra.get("stage", "-"))
        kwargs["extra"].setdefault("run", self.extra.get("run", "-"))
        return msg, kwargs


def get_stage_logger(stage: str = "-", run: str | None = None) -> StageLogAdapter:
    """Get a logger that stamps messages with a stage name and run id.

    Args:
        stage: Pipeline stage (train, quantize, dse, ...)
        run: Short run identifier, usually the config hash prefix
    """
    return StageLogAdapter(get_logger(), {"stage": stage, "run": run or "-"})


def log_cli_call(command: str, args: dict | None = None) -> None:
    """Log a CLI command invocation.

    Args:
        command: The command name (e.g., "train", "dse")
        args: Command arguments as a dict
    """
    log = get_stage_logger("cli")
    args_str = " ".join(f"{k}={v}" for k, v in (args or {}).items())
    log.info(f"CLI {command} {args_str}".strip())


def log_error(message: str, stage: str = "-") -> None:
    """Log an error message."""
    get_stage_logger(stage).error(message)


def log_info(message: str, stage: str = "-") -> None:
    """Log an info message."""
    get_stage_logger(stage).info(message)


def log_debug(message: str, stage: str = "-") -> None:
    """Log a debug message."""
    get_stage_logger(stage).debug(message)
