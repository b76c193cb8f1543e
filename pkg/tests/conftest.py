"""
Shared fixtures for the wavres test suite
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from wavres.ct_sim import GeometryConfig
from wavres.wavresnet import TopologyConfig

CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'configs'))


@pytest.fixture(autouse=True)
def quiet_environment(monkeypatch, tmp_path):
    """No progress bars; CLI log file goes to the test's temp dir"""
    monkeypatch.setenv("WAVRES_PROGRESS", "0")
    monkeypatch.setenv("WAVRES_LOG_FILE", str(tmp_path / "wavres.log"))
    monkeypatch.delenv("WAVRES_CONFIG", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20170913)


@pytest.fixture
def small_geometry():
    """64x64 grid, 90 parallel views"""
    return GeometryConfig.for_image(64, n_views=90)


@pytest.fixture
def tiny_geometry():
    return GeometryConfig.for_image(16, n_views=24)


@pytest.fixture
def tiny_topology():
    """Full 24-conv layout at two channels"""
    return TopologyConfig(channels=2, init_seed=3)


@pytest.fixture
def micro_topology():
    """Smallest network that still has every unit type"""
    return TopologyConfig(channels=2, modules=1, convs_per_module=1, post_convs=1, init_seed=5)


@pytest.fixture
def desk_config_path():
    return os.path.join(CONFIG_DIR, 'desk.cfg')


@pytest.fixture
def default_config_path():
    return os.path.join(CONFIG_DIR, 'default.cfg')
