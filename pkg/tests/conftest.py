import io
from importlib import resources

import numpy as np
import pytest

from poisonsense.network import Link, Network, generate_routes


def parallel_network(params, demand=10.0):
    """One OD (1 -> 2) served by parallel links, one per (b, w, c) triple."""
    links = tuple(Link(1, 2, b, c, w) for b, w, c in params)
    net = Network(2, links, ((1, 2),), (demand,))
    return net.with_routes([(i,) for i in range(len(links))], [0] * len(links))


def diamond(demand=10.0):
    links = (
        Link(1, 2, 1.0, 10.0, 0.15),
        Link(1, 3, 1.0, 10.0, 0.15),
        Link(2, 4, 1.0, 10.0, 0.15),
        Link(3, 4, 1.0, 10.0, 0.15),
    )
    coords = {1: (0.0, 1.0), 2: (1.0, 2.0), 3: (1.0, 0.0), 4: (2.0, 1.0)}
    return Network(4, links, ((1, 4),), (demand,), coords=coords)


@pytest.fixture
def diamond_net():
    return generate_routes(diamond(), 2)


def toy_file(name):
    return resources.files("poisonsense") / "data" / "toy" / name


@pytest.fixture
def toy_net():
    from poisonsense.network import parse_tntp

    with toy_file("toy_net.tntp").open() as nf, toy_file("toy_trips.tntp").open() as tf, toy_file("toy_node.tntp").open() as nd:
        return generate_routes(parse_tntp(nf, tf, nd), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def text(s):
    return io.StringIO(s)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
