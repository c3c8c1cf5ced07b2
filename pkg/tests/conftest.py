import math

import numpy as np
import pytest

from icnnopf.grid import Branch, Bus, Generator, PowerNetwork, bundled_case


def two_bus(cost=10.0, pmax=2.0, rate=math.inf, load=1.0, second_gen_cost=None) -> PowerNetwork:
    """Slack bus 1 with one generator, load at bus 2, one line with b = -5."""
    buses = (
        Bus(1, 3, 0.0, 0.0, 0.0, 0.0, 0.9, 1.1),
        Bus(2, 1, load, 0.2 * load, 0.0, 0.0, 0.9, 1.1),
    )
    gens = [Generator(1, 0.0, pmax, -1.0, 1.0, cost)]
    if second_gen_cost is not None:
        gens.append(Generator(2, 0.0, pmax, -1.0, 1.0, second_gen_cost))
    branches = (Branch(1, 2, 0.0, 0.2, 0.0, rate),)
    return PowerNetwork(100.0, buses, branches, tuple(gens), "two-bus")


@pytest.fixture(scope="session")
def case2():
    return bundled_case("case2")


@pytest.fixture(scope="session")
def case5():
    return bundled_case("case5")


@pytest.fixture(scope="session")
def case14():
    return bundled_case("case14")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def abs_model():
    """Convex network computing |b| exactly: relu(b) + relu(-b)."""
    from icnnopf.icnn import IcnnModel, NetConfig

    params = {"H0": [[1.0], [-1.0]], "d0": [0.0, 0.0], "W_out": [1.0, 1.0], "H_out": [0.0], "d_out": 0.0}
    return IcnnModel(NetConfig(1, (2,), True, 0), params)


def abs_support():
    """Value-function data of |b| at b = -1 and b = 1."""
    from icnnopf.certify import EnvelopePair

    return EnvelopePair([[-1.0], [1.0]], [1.0, 1.0], [[-1.0], [1.0]])


@pytest.fixture(scope="session")
def case14_small():
    from icnnopf.datagen import PerturbationConfig, generate

    return generate(bundled_case("case14"), PerturbationConfig(count=120, seed=4))


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one status line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
