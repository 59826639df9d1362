"""
Logging system for the phantom design toolkit.

This module provides a centralized logging system used by every command and
library module. Log records go to stderr (so command output on stdout stays
clean and reproducible) and, when enabled, to rotating files under ``logs/``.

Key concepts:
- One logging system per process, created lazily on first use
- Separate error log so failed runs are easy to find
- Log rotation prevents log files from growing too large
"""

import logging
import logging.handlers
import os
from pathlib import Path
from typing import Optional

import yaml


LOG_FORMAT = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class PhantomLogger:
    """
    Centralized logging system for the phantom design toolkit.

    Creates and manages the loggers the application needs:
    - Main application logger ``phantom``: general operations, warnings
    - Error logger ``phantom.errors``: only errors, saved separately

    Module loggers (``core.matching`` and friends) share the main logger's
    handlers, so every message follows the same format and level.
    """

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize logging system.

        Args:
            config_path: Path to a settings file. If None, the settings file of
                the detected environment is used.
        """
        self.config = self._load_config(config_path)
        self.loggers = {}
        self.log_config = self.config.get("logging", {}) or {}
        self.base_path = Path(__file__).parent.parent / "logs"

        if self.log_config.get("file_output", False):
            self._setup_directories()
        self._setup_loggers()

    def _load_config(self, config_path: Optional[str]) -> dict:
        """
        Load the logging section source file.

        Args:
            config_path: Path to config file, or None for the environment default

        Returns:
            Dictionary containing all configuration settings
        """
        if config_path is None:
            config_dir = Path(__file__).parent.parent / "config"
            environment = (
                os.environ.get('PHANTOM_ENVIRONMENT') or
                os.environ.get('ENVIRONMENT') or
                'dev'
            )
            config_path = config_dir / f"settings-{environment}.yaml"
            if not config_path.exists():
                config_path = config_dir / "settings.yaml"

        try:
            with open(config_path, 'r') as f:
                return yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError):
            # Logging must come up even when configuration is broken;
            # the config manager reports the actual problem.
            return {}

    def _setup_directories(self):
        """Create logging directories if they don't exist."""
        for subdir in ["daily", "errors"]:
            (self.base_path / subdir).mkdir(parents=True, exist_ok=True)

    def _level(self) -> int:
        level_name = str(self.log_config.get("level", "INFO")).upper()
        level = getattr(logging, level_name, None)
        if not isinstance(level, int):
            return logging.INFO
        return level

    def _setup_loggers(self):
        """Setup the application loggers with proper formatting and handlers."""
        level = self._level()
        console = bool(self.log_config.get("console_output", True))

        self._create_logger(
            "phantom",
            level,
            self.base_path / "daily" / "phantom.log",
            console=console
        )

        self._create_logger(
            "phantom.errors",
            logging.ERROR,
            self.base_path / "errors" / "error.log",
            console=False
        )

    def _create_logger(self, name: str, level: int, file_path: Path, console: bool = False):
        """
        Create a logger with file and optional console handlers.

        Args:
            name: Logger name (used to retrieve it later)
            level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            file_path: Where to save the log file
            console: Whether to also print to stderr
        """
        logger = logging.getLogger(name)
        logger.setLevel(level)
        logger.handlers.clear()

        formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

        if self.log_config.get("file_output", False):
            try:
                max_size_mb = int(self.log_config.get("max_size_mb", 10))
            except (ValueError, TypeError):
                max_size_mb = 10
            try:
                backup_count = int(self.log_config.get("backup_count", 5))
            except (ValueError, TypeError):
                backup_count = 5

            file_handler = logging.handlers.RotatingFileHandler(
                file_path,
                maxBytes=max_size_mb * 1024 * 1024,
                backupCount=backup_count
            )
            file_handler.setFormatter(formatter)
            file_handler.setLevel(level)
            logger.addHandler(file_handler)

        if console:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(formatter)
            console_handler.setLevel(level)
            logger.addHandler(console_handler)

        if not logger.handlers:
            logger.addHandler(logging.NullHandler())

        self.loggers[name] = logger
        logger.propagate = False

    def get_logger(self, name: str = "phantom") -> logging.Logger:
        """
        Get a logger by name.

        Names outside the ``phantom`` hierarchy are mapped underneath it so
        that module loggers inherit the configured handlers.

        Args:
            name: Logger name (default: main application logger)

        Returns:
            Logger instance ready to use
        """
        if name in self.loggers:
            return self.loggers[name]
        if name != "phantom" and not name.startswith("phantom."):
            name = f"phantom.{name}"
        return logging.getLogger(name)


_logger_instance: Optional[PhantomLogger] = None


def get_logger(name: str = "phantom") -> logging.Logger:
    """
    Get a logger from the global logging system.

    Args:
        name: Logger name, usually ``__name__``

    Returns:
        Logger instance ready to use
    """
    global _logger_instance

    if _logger_instance is None:
        _logger_instance = PhantomLogger()

    return _logger_instance.get_logger(name)


def set_level(level_name: str) -> None:
    """Change the console and file level of the main logger at runtime."""
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        return
    logger = get_logger("phantom")
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
