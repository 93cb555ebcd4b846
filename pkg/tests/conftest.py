import pytest

from fedcore.clock import FakeClock
from fedcore.config import Config
from fedcore.core import CoreService


def make_core(clock=None, **overrides) -> CoreService:
    cfg = Config(agent_autostart=False, **overrides)
    return CoreService(cfg, clock=clock) if clock else CoreService(cfg)


@pytest.fixture
def core():
    service = make_core()
    yield service
    service.close()


@pytest.fixture
def clocked_core():
    clock = FakeClock()
    service = make_core(clock=clock)
    yield service, clock
    service.close()


# The decoy pool: the hub constraint is satisfied by three nodes, but only
# the zigbee link works, so a greedy first pick can strand the link while
# backtracking succeeds.
IOT_POOL = {
    "role": "resource",
    "nodes": [
        {
            "id": "n0",
            "props": {"image": ["riot", "debian-9"], "memory": {"capacity": 536870912}},
            "alloc": "exclusive",
        },
        {
            "id": "hub1",
            "props": {"image": ["debian-9"], "memory": {"capacity": 1073741824}},
            "alloc": "exclusive",
        },
        {
            "id": "hub2",
            "props": {"image": ["ubuntu-snap"], "memory": {"capacity": 1073741824}},
            "alloc": "exclusive",
        },
    ],
    "links": [
        {
            "id": "l01",
            "endpoints": ["n0", "hub1"],
            "props": {"stack": "zigbee", "loss": 80000},
            "capacity_bps": 50000,
        },
        {
            "id": "l02",
            "endpoints": ["n0", "hub2"],
            "props": {"stack": "ethernet", "loss": 1000},
            "capacity_bps": 1000000,
        },
    ],
}
