import numpy as np
import pytest

from dynequiv.grid import FaultScenario, ieee9, two_machine
from dynequiv.harness import build_dataset
from dynequiv.integrators import TimeGrid


@pytest.fixture(scope="session")
def tm_data():
    """Two-machine single-scenario set, short window, fine step."""
    net = two_machine()
    scen = (FaultScenario(id=0, bus=4, t_fault=0.1, t_clear=0.16),)
    dataset, insys = build_dataset(net, scen, TimeGrid(0.0, 0.4, 0.002), (3,))
    return net, dataset, insys


@pytest.fixture(scope="session")
def ieee9_data():
    """Three-scenario ieee9 set on a 2 s window; shared by training tests."""
    net = ieee9()
    scen = (FaultScenario(id=0, bus=6, t_fault=0.1, t_clear=0.20),
            FaultScenario(id=1, bus=9, t_fault=0.1, t_clear=0.18),
            FaultScenario(id=2, bus=8, t_fault=0.1, t_clear=0.25))
    dataset, insys = build_dataset(net, scen, TimeGrid(0.0, 2.0, 0.005), (9, 11))
    return net, dataset, insys


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
