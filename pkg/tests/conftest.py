"""Shared fixtures and the --run-slow switch."""
import numpy as np
import pytest

from overlap_registration.geometry import PointCloud


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False,
                     help='run tests marked slow (acceptance runs)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def clean_env(monkeypatch):
    """Strip toolkit environment variables and stop .env files leaking in."""
    for var in ('OVERLAP_REG_LOG', 'OVERLAP_REG_THREADS', 'OVERLAP_REG_BUNNY'):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setattr('overlap_registration.bench.config.load_dotenv', lambda *a, **k: False)
    monkeypatch.setattr('overlap_registration.view_sim.load_dotenv', lambda *a, **k: False)
    monkeypatch.setattr('overlap_registration.log.load_dotenv', lambda *a, **k: False)


@pytest.fixture
def box_cloud():
    """Random points filling an anisotropic box, well conditioned for alignment."""
    rng = np.random.default_rng(7)
    return PointCloud(rng.uniform(-1.0, 1.0, size=(400, 3)) * np.array([1.0, 0.6, 0.3]))
