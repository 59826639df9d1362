"""
Shared bases for components that read settings and log under the phantom
logger.
"""

from abc import ABC
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from utils.config_manager import get_config_manager
from utils.logging import get_logger


class ConfigurableComponent(ABC):
    """
    Component bound to one environment's settings.

    Subclasses get ``self.logger`` named after their module and
    ``self.config_manager`` for the resolved environment.
    """

    def __init__(self, environment: Optional[str] = None, config_dir: Optional[Path] = None):
        self.logger = get_logger(self.__class__.__module__)
        self.config_manager = get_config_manager(environment, config_dir)
        self.environment = self.config_manager.environment
        self.logger.debug("%s using %s settings", self.__class__.__name__, self.environment)

    def get_config_value(self, key: str, default: Any = None) -> Any:
        """Dotted-key lookup, e.g. ``'grid.fmin_hz'``."""
        return self.config_manager.get(key, default)

    def grid_bounds(self) -> Tuple[float, float]:
        """Configured frequency range in Hz."""
        return (float(self.get_config_value("grid.fmin_hz", 1e5)),
                float(self.get_config_value("grid.fmax_hz", 1e8)))


class DataComponent(ConfigurableComponent):
    """Component that reads and writes files under one directory."""

    def __init__(self, data_dir: Path, environment: Optional[str] = None,
                 config_dir: Optional[Path] = None):
        super().__init__(environment, config_dir)
        self.data_dir = Path(data_dir)
        self.logger.debug("Data directory: %s", self.data_dir.absolute())

    def get_data_file_path(self, filename: str) -> Path:
        return self.data_dir / filename


class ValidatorComponent(ConfigurableComponent):
    """Validator that checks records against the configured grid."""

    def __init__(self, environment: Optional[str] = None, config_dir: Optional[Path] = None):
        super().__init__(environment, config_dir)
        self.fmin_hz, self.fmax_hz = self.grid_bounds()

    def log_validation_result(self, result: bool, message: str,
                              details: Optional[Dict[str, Any]] = None) -> None:
        if result:
            self.logger.debug("OK %s", message)
            return
        self.logger.error("FAILED %s", message)
        if details:
            self.logger.error("Details: %s", details)
