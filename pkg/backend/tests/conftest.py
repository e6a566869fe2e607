import os
import sys

import pytest

# Modules live flat in backend/ and import each other by bare name
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from models import OpticalConfig  # noqa: E402
from synthetic import calibrated_fixture  # noqa: E402


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    monkeypatch.setenv('ABERRO_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.setenv('ABERRO_THREADS', '1')
    monkeypatch.delenv('THREADS', raising=False)
    monkeypatch.delenv('DATA_DIR', raising=False)
    monkeypatch.delenv('ABERRO_DATA_DIR', raising=False)


@pytest.fixture
def small_optics():
    return OpticalConfig(grid_n=64)


@pytest.fixture
def calibrated():
    """Calibrated 256 x 256, 4-class instance (optimal temperature 1)"""
    return calibrated_fixture(seed=7, shape=(256, 256))
