"""
Unit tests for the configuration manager.
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest
import yaml

from utils.config_manager import ConfigManager, get_config_manager, load_config, reset_config_manager
from utils.error_handler import ConfigurationError


@pytest.fixture
def temp_config_dir():
    """Create a temporary config directory with test files."""
    with tempfile.TemporaryDirectory() as temp_dir:
        config_dir = Path(temp_dir)

        base_config = {
            'grid': {'fmin_hz': 1.0e5, 'fmax_hz': 1.0e8, 'points': 201},
            'matching': {'threshold': 0.10},
            'database': {'path': 'reference'},
            'logging': {'level': 'INFO'},
        }
        with open(config_dir / 'settings.yaml', 'w') as f:
            yaml.dump(base_config, f)

        dev_config = {
            'grid': {'fmin_hz': 1.0e6, 'fmax_hz': 1.0e8, 'points': 51},
            'matching': {'threshold': 0.05},
            'output': {'format': 'json'},
            'development': {'environment': 'dev'},
        }
        with open(config_dir / 'settings-dev.yaml', 'w') as f:
            yaml.dump(dev_config, f)

        yield config_dir


class TestConfigManager:
    """Test cases for ConfigManager class."""

    def test_init_with_environment(self, temp_config_dir):
        """Test initialization with specific environment."""
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)
        assert manager.environment == 'dev'
        assert manager.config_dir == temp_config_dir

    def test_init_without_environment(self, temp_config_dir):
        """Test initialization without environment (should auto-detect)."""
        with patch.dict(os.environ, {}, clear=True):
            manager = ConfigManager(config_dir=temp_config_dir)
            assert manager.environment == 'dev'

    @patch.dict(os.environ, {'PHANTOM_ENVIRONMENT': 'prod', 'ENVIRONMENT': 'dev'})
    def test_environment_detection_phantom_env(self):
        """PHANTOM_ENVIRONMENT wins over ENVIRONMENT."""
        assert ConfigManager().environment == 'prod'

    def test_environment_detection_env(self):
        """Test environment detection from ENVIRONMENT."""
        with patch.dict(os.environ, {'ENVIRONMENT': 'prod'}, clear=True):
            assert ConfigManager().environment == 'prod'

    def test_load_environment_specific_config(self, temp_config_dir):
        """Test loading environment-specific config."""
        config = ConfigManager(environment='dev', config_dir=temp_config_dir).load_config()

        assert config['grid']['points'] == 51
        assert config['matching']['threshold'] == 0.05
        assert config['development']['environment'] == 'dev'

    def test_load_base_config_fallback(self, temp_config_dir):
        """Test fallback to base config when env-specific doesn't exist."""
        config = ConfigManager(environment='prod', config_dir=temp_config_dir).load_config()

        assert config['grid']['points'] == 201
        assert config['database']['path'] == 'reference'

    def test_environment_variable_overrides(self, temp_config_dir, monkeypatch):
        """Test environment variable overrides."""
        monkeypatch.setenv('PHANTOM_DB', '/data/phantoms')
        monkeypatch.setenv('PHANTOM_FORMAT', 'csv')
        monkeypatch.setenv('PHANTOM_LOG_LEVEL', 'debug')
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)

        assert manager.get('database.path') == '/data/phantoms'
        assert manager.get('output.format') == 'csv'
        assert manager.get('logging.level') == 'DEBUG'

    def test_env_override_creates_missing_section(self, temp_config_dir, monkeypatch):
        monkeypatch.setenv('PHANTOM_TISSUES', 'my_tissues.json')
        manager = ConfigManager(environment='prod', config_dir=temp_config_dir)
        assert manager.get('tissues.path') == 'my_tissues.json'

    def test_get_with_dot_notation(self, temp_config_dir):
        """Test getting config values with dot notation."""
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)

        assert manager.get('grid.fmin_hz') == 1.0e6
        assert manager.get('output.format') == 'json'
        assert manager.get('nonexistent.key', 'default') == 'default'

    def test_config_property(self, temp_config_dir):
        """Test config property access."""
        config = ConfigManager(environment='dev', config_dir=temp_config_dir).config

        assert isinstance(config, dict)
        assert 'grid' in config

    def test_config_loading_error(self):
        """Test error handling when config file doesn't exist."""
        with tempfile.TemporaryDirectory() as temp_dir:
            manager = ConfigManager(config_dir=Path(temp_dir))

            with pytest.raises(ConfigurationError, match="Configuration loading failed"):
                manager.load_config()

    def test_caching(self, temp_config_dir):
        """Test that config is cached after first load."""
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)

        assert manager.load_config() is manager.load_config()


class TestOverlay:
    """Database-directory overlay file."""

    def test_overlay_merges_over_settings(self, temp_config_dir, tmp_path):
        with open(tmp_path / 'phantom.yaml', 'w') as f:
            yaml.dump({'matching': {'threshold': 0.2}}, f)
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)
        manager.use_overlay(tmp_path)

        assert manager.get('matching.threshold') == 0.2
        # Sibling keys survive the merge
        assert manager.get('grid.points') == 51

    def test_env_beats_overlay(self, temp_config_dir, tmp_path, monkeypatch):
        with open(tmp_path / 'phantom.yaml', 'w') as f:
            yaml.dump({'output': {'format': 'markdown'}}, f)
        monkeypatch.setenv('PHANTOM_FORMAT', 'csv')
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)
        manager.use_overlay(tmp_path)

        assert manager.get('output.format') == 'csv'

    def test_missing_overlay_is_ignored(self, temp_config_dir, tmp_path):
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)
        manager.use_overlay(tmp_path)
        assert manager.get('matching.threshold') == 0.05

    def test_switching_overlay_reloads(self, temp_config_dir, tmp_path):
        manager = ConfigManager(environment='dev', config_dir=temp_config_dir)
        first = manager.load_config()
        with open(tmp_path / 'phantom.yaml', 'w') as f:
            yaml.dump({'grid': {'points': 11}}, f)
        manager.use_overlay(tmp_path)

        assert manager.load_config() is not first
        assert manager.get('grid.points') == 11


class TestGlobalFunctions:
    """Test global configuration functions."""

    def test_get_config_manager_singleton(self, temp_config_dir):
        """Test that get_config_manager returns singleton."""
        reset_config_manager()
        manager1 = get_config_manager(environment='dev', config_dir=temp_config_dir)
        manager2 = get_config_manager()

        assert manager1 is manager2

    def test_load_config_convenience(self, temp_config_dir):
        """Test convenience function for loading config."""
        reset_config_manager()
        config = load_config(environment='dev', config_dir=temp_config_dir)

        assert isinstance(config, dict)
        assert 'grid' in config

    def test_bundled_test_settings(self):
        """The bundled test settings carry the documented defaults."""
        manager = get_config_manager()
        assert manager.environment == 'test'
        assert manager.get('matching.threshold') == 0.10
        assert manager.get('grid.points') == 201
        assert manager.get('database.path') == 'reference'
