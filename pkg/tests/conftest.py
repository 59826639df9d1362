"""
Shared pytest setup: run against the test settings with fresh singletons.
"""

import os

os.environ['PHANTOM_ENVIRONMENT'] = 'test'

import pytest

import utils.config_manager
import utils.logging


@pytest.fixture(autouse=True)
def fresh_config(monkeypatch):
    """Reset the configuration singleton and strip PHANTOM_* overrides."""
    for name in ('PHANTOM_DB', 'PHANTOM_TISSUES', 'PHANTOM_FORMAT', 'PHANTOM_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv('PHANTOM_ENVIRONMENT', 'test')
    utils.config_manager.reset_config_manager()
    yield
    utils.config_manager.reset_config_manager()


@pytest.fixture(scope="session")
def tissue_library():
    from core.dispersion import load_tissue_library
    return load_tissue_library()


@pytest.fixture(scope="session")
def reference_db(tissue_library):
    from core.reference_data import build_reference_database
    return build_reference_database(tissue_library)


@pytest.fixture
def phantom_log(caplog):
    """caplog wired to the non-propagating ``phantom`` logger."""
    import logging
    logger = logging.getLogger("phantom")
    logger.addHandler(caplog.handler)
    yield caplog
    logger.removeHandler(caplog.handler)
