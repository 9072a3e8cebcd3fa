import numpy as np
import pytest

from gasmor.model import assemble, steady_state
from gasmor.network import parse_network, parse_scenario


def net_text(pipes, supply=("N1",), demand=("N2",)):
    rows = ["# pipes"] + [",".join(str(v) for v in p) for p in pipes] + ["# ports"]
    rows += [f"supply,{n}" for n in supply] + [f"demand,{n}" for n in demand]
    return "\n".join(rows) + "\n"


SINGLE_PIPE = net_text([("P1", "N1", "N2", 1000, 0.5, 0, 1e-5)])


def single_pipe_model(scheme="ode_end", gravity="none", s=5e6, d=50.0, length=1000.0, dh=0.0, friction=None):
    net = parse_network(net_text([("P1", "N1", "N2", length, 0.5, dh, 1e-5)]))
    m = assemble(net, scheme=scheme, gravity=gravity, friction=friction)
    steady_state(m, np.array([s]), np.array([d]))
    return m


# small tree: supply S feeding a junction with two demand branches, one branch with a climb
TREE = net_text(
    [
        ("P1", "S", "J", 20000, 0.8, 15.0, 1e-5),
        ("P2", "J", "D1", 12000, 0.6, -8.0, 1e-5),
        ("P3", "J", "K", 9000, 0.7, 20.0, 1e-5),
        ("P4", "K", "D2", 7000, 0.5, -4.0, 1e-5),
    ],
    supply=("S",),
    demand=("D1", "D2"),
)

TREE_SCENARIO = """! T=7200
! dt=60
t_s,S,D1,D2
0,6e6,30,20
1800,6e6,33,20
3600,6e6,33,24
7200,6.05e6,28,22
"""


@pytest.fixture
def tree_network():
    return parse_network(TREE)


@pytest.fixture
def tree_scenario(tree_network):
    return parse_scenario(TREE_SCENARIO, tree_network)


@pytest.fixture
def tree_model(tree_network, tree_scenario):
    from gasmor.model import build_model

    return build_model(tree_network, tree_scenario, scheme="ode_end", gravity="dynamic")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
