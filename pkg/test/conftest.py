import pytest

from voluntier.clock import VirtualClock
from voluntier.config import ServerSettings
from voluntier.proto import SweepSpec, generate_keypair
from voluntier.server import ProjectServer
from voluntier.store import MemoryEventStore


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long statistical tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def private_key():
    return generate_keypair()


@pytest.fixture
def public_key(private_key):
    return private_key.public_key()


@pytest.fixture
def clock():
    return VirtualClock(1000.0)


@pytest.fixture
def server_settings():
    return ServerSettings(heartbeat_interval=10.0, dead_threshold=86400.0)


@pytest.fixture
def store():
    return MemoryEventStore()


@pytest.fixture
def server(server_settings, store, private_key, clock):
    """Project server on an in-memory log whose assimilator accepts any output."""
    return ProjectServer(server_settings, store, private_key, clock=clock, assimilator=lambda wu, output: {})


@pytest.fixture
def tiny_mux_sweep():
    """Four quick 6-multiplexer runs."""
    return SweepSpec(
        name="mux6",
        base_params={"problem": "multiplexer", "address_bits": 2, "population_size": 20, "generations": 3,
                     "max_initial_depth": 4},
        replicates=4,
        seed_base=11,
    )
