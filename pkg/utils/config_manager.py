"""
Centralized configuration management for the phantom design toolkit.

This module provides a single point of configuration loading and management.
Precedence, lowest to highest: settings file, database-directory overlay
(``phantom.yaml``), environment variables. Command-line flags are applied on
top by the CLI.
"""

from pathlib import Path
from typing import Dict, Optional, Any
import copy
import os

import yaml

from utils.error_handler import ConfigurationError
from utils.logging import get_logger


OVERLAY_FILENAME = "phantom.yaml"


def _deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``overlay`` into a copy of ``base``; nested dicts merge key by key."""
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigManager:
    """
    Centralized configuration manager for the application.

    Handles environment-aware configuration loading with proper fallbacks
    and validation.
    """

    # Environment variable -> (config path, converter)
    ENV_MAPPINGS = {
        'PHANTOM_DB': (['database', 'path'], str),
        'PHANTOM_TISSUES': (['tissues', 'path'], str),
        'PHANTOM_FORMAT': (['output', 'format'], str),
        'PHANTOM_LOG_LEVEL': (['logging', 'level'], str.upper),
    }

    def __init__(self, environment: Optional[str] = None, config_dir: Optional[Path] = None):
        """
        Initialize configuration manager.

        Args:
            environment: Target environment (dev/test/prod)
            config_dir: Directory containing config files
        """
        self.logger = get_logger(__name__)
        self.environment = environment or self._detect_environment()
        self.config_dir = Path(config_dir) if config_dir else Path(__file__).parent.parent / "config"
        self.overlay_path: Optional[Path] = None
        self._config: Optional[Dict[str, Any]] = None

    def _detect_environment(self) -> str:
        """
        Detect environment from environment variables or default to 'dev'.

        Priority:
        1. PHANTOM_ENVIRONMENT
        2. ENVIRONMENT
        3. Default to 'dev'
        """
        return (
            os.environ.get('PHANTOM_ENVIRONMENT') or
            os.environ.get('ENVIRONMENT') or
            'dev'
        )

    def load_config(self) -> Dict[str, Any]:
        """
        Load environment-specific configuration.

        Returns:
            Configuration dictionary

        Raises:
            ConfigurationError: If no settings file can be read
        """
        if self._config is not None:
            return self._config

        try:
            env_config_path = self.config_dir / f"settings-{self.environment}.yaml"
            if env_config_path.exists():
                config_path = env_config_path
            else:
                config_path = self.config_dir / "settings.yaml"

            with open(config_path, 'r') as f:
                config = yaml.safe_load(f) or {}
            self.logger.debug("Loaded configuration from %s", config_path)

            if self.overlay_path is not None and self.overlay_path.exists():
                with open(self.overlay_path, 'r') as f:
                    overlay = yaml.safe_load(f) or {}
                config = _deep_merge(config, overlay)
                self.logger.info("Applied configuration overlay %s", self.overlay_path)

        except (OSError, yaml.YAMLError) as e:
            self.logger.error("Failed to load configuration: %s", e)
            raise ConfigurationError(f"Configuration loading failed: {e}")

        if not isinstance(config, dict):
            raise ConfigurationError("Configuration loading failed: settings must be a mapping")

        self._config = config
        self._apply_env_overrides()
        return self._config

    def use_overlay(self, database_dir: Optional[Path]) -> None:
        """
        Register the overlay file living in a database directory.

        The next ``load_config`` call merges it over the settings file.
        """
        overlay = Path(database_dir) / OVERLAY_FILENAME if database_dir else None
        if overlay != self.overlay_path:
            self.overlay_path = overlay
            self._config = None

    def _apply_env_overrides(self):
        """Apply environment variable overrides to configuration."""
        if self._config is None:
            return

        for env_var, (config_path, convert) in self.ENV_MAPPINGS.items():
            env_value = os.environ.get(env_var)
            if not env_value:
                continue

            current = self._config
            for key in config_path[:-1]:
                if not isinstance(current.get(key), dict):
                    current[key] = {}
                current = current[key]

            current[config_path[-1]] = convert(env_value)
            self.logger.info("Applied environment override: %s -> %s", env_var, '.'.join(config_path))

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by key.

        Args:
            key: Configuration key (supports dot notation like 'grid.points')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        current: Any = self.load_config()

        try:
            for k in key.split('.'):
                current = current[k]
            return current
        except (KeyError, TypeError):
            return default

    @property
    def config(self) -> Dict[str, Any]:
        """Get the full configuration dictionary."""
        return self.load_config()


_config_manager: Optional[ConfigManager] = None


def get_config_manager(environment: Optional[str] = None, config_dir: Optional[Path] = None) -> ConfigManager:
    """
    Get singleton configuration manager instance.

    Args:
        environment: Target environment (only used on first call)
        config_dir: Config directory (only used on first call)

    Returns:
        ConfigManager instance
    """
    global _config_manager

    if _config_manager is None:
        _config_manager = ConfigManager(environment, config_dir)

    return _config_manager


def reset_config_manager() -> None:
    """Drop the singleton so the next access reloads configuration."""
    global _config_manager
    _config_manager = None


def load_config(environment: Optional[str] = None, config_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    Convenience function to load configuration.

    Args:
        environment: Target environment
        config_dir: Config directory

    Returns:
        Configuration dictionary
    """
    return get_config_manager(environment, config_dir).load_config()
