from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import (  # noqa: E402
    build_rig,
    echo_descriptor,
    start_echo,
    start_tank,
    tank_descriptor,
)

REPO_ROOT = Path(__file__).parent.parent
DEMO_CONFIG = REPO_ROOT / "demo" / "tank.yaml"
DEMO_SCENARIO = REPO_ROOT / "demo" / "tank_scenario.yaml"
GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def tank_server():
    server = start_tank()
    yield server
    server.close()


@pytest.fixture
def echo_server():
    server = start_echo()
    yield server
    server.close()


@pytest.fixture
def tank_handle(tank_server):
    from twinrt.gateway import connect

    handle = connect(tank_descriptor(tank_server.endpoint))
    yield handle
    handle.close()


@pytest.fixture
def echo_handle(echo_server):
    from twinrt.gateway import connect

    handle = connect(echo_descriptor(echo_server.endpoint))
    yield handle
    handle.close()


@pytest.fixture
def rig():
    from helpers import level_mapping, valve_mapping

    rig = build_rig(mappings=[level_mapping(), valve_mapping()], valve=0.5)
    yield rig
    rig.close()


@pytest.fixture
def demo_config():
    import twinrt.config as config_mod

    return config_mod.load(DEMO_CONFIG)
