import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmor.network import (Network, NetworkError, PipeSpec, apply_height_profiles, expand_height_profile,
                            incidence, parse_network, parse_profiles, parse_scenario, serialize_network,
                            serialize_scenario, validate)
from gasmor import fixtures

from conftest import SINGLE_PIPE, net_text


def test_single_pipe_parses():
    net = parse_network(SINGLE_PIPE)
    assert net.nodes == ("N1", "N2")
    assert len(net.pipes) == 1
    assert net.pipe("P1").length == 1000.0
    assert net.supply_nodes == ("N1",) and net.demand_nodes == ("N2",)


def test_path_stacked_incidence():
    net = parse_network(net_text([("P1", "N1", "N2", 1000, 0.5, 0, 1e-5), ("P2", "N2", "N3", 1000, 0.5, 0, 1e-5)],
                                 demand=("N3",)))
    inc = incidence(net)
    assert inc.interior_nodes == ("N2", "N3")
    assert inc.supply_nodes == ("N1",)
    np.testing.assert_array_equal(inc.stacked.toarray(), [[1, -1], [0, 1], [-1, 0]])


def test_negative_diameter_reports_location():
    with pytest.raises(NetworkError, match="diameter must be positive") as err:
        parse_network(net_text([("P1", "N1", "N2", 1000, -0.5, 0, 1e-5)]))
    assert err.value.line == 2


def test_non_numeric_field_reports_column():
    with pytest.raises(NetworkError) as err:
        parse_network(net_text([("P1", "N1", "N2", "long", 0.5, 0, 1e-5)]))
    assert (err.value.line, err.value.column) == (2, 4)


def test_unknown_port_node_and_empty_supply():
    with pytest.raises(NetworkError):
        parse_network(net_text([("P1", "N1", "N2", 1000, 0.5, 0, 1e-5)], demand=("N9",)))
    with pytest.raises(NetworkError):
        parse_network(net_text([("P1", "N1", "N2", 1000, 0.5, 0, 1e-5)], supply=()))


def test_single_pipe_incidence_and_reversal():
    inc = incidence(parse_network(SINGLE_PIPE))
    assert inc.A0.toarray().tolist() == [[1.0]]
    assert inc.AS.toarray().tolist() == [[-1.0]]
    rev = incidence(parse_network(net_text([("P1", "N2", "N1", 1000, 0.5, 0, 1e-5)])))
    assert rev.A0.toarray().tolist() == [[-1.0]]
    assert rev.AS.toarray().tolist() == [[1.0]]


def test_star_incidence():
    net = parse_network(net_text([(f"P{i}", "C", f"L{i}", 1000, 0.5, 0, 1e-5) for i in (1, 2, 3)],
                                 supply=("C",), demand=("L1", "L2", "L3")))
    np.testing.assert_array_equal(incidence(net).A0.toarray(), np.eye(3))


def test_validate_path_triangle_isolated():
    path = Network(("N1", "N2", "N3"),
                   (PipeSpec("P1", "N1", "N2", 1, 0.5, 0, 1e-5), PipeSpec("P2", "N2", "N3", 1, 0.5, 0, 1e-5)),
                   ("N1",), ("N3",))
    rep = validate(path)
    assert rep.ok and rep.connected and rep.is_tree

    tri = Network(("N1", "N2", "N3"),
                  (PipeSpec("P1", "N1", "N2", 1, 0.5, 0, 1e-5), PipeSpec("P2", "N2", "N3", 1, 0.5, 0, 1e-5),
                   PipeSpec("P3", "N3", "N1", 1, 0.5, 0, 1e-5)),
                  ("N1",), ("N3",))
    rep = validate(tri)
    assert rep.ok and not rep.is_tree
    assert any("cycle detected" in line for line in rep.lines())

    iso = Network(("N1", "N2", "N3"), (PipeSpec("P1", "N1", "N2", 1, 0.5, 0, 1e-5),), ("N1",), ("N2",))
    rep = validate(iso)
    assert not rep.ok
    assert "disconnected" in rep.failures()[0]
    assert "N3" in rep.failures()[0]


def test_parse_rejects_disconnected():
    text = net_text([("P1", "N1", "N2", 1000, 0.5, 0, 1e-5), ("P2", "N3", "N4", 1000, 0.5, 0, 1e-5)])
    with pytest.raises(NetworkError, match="disconnected"):
        parse_network(text)


# -- scenarios


def test_constant_scenario():
    net = parse_network(SINGLE_PIPE)
    scn = parse_scenario("! T=100\n! dt=10\nt_s,N1,N2\n0,5e6,50\n", net)
    assert scn.horizon == 100
    for t in (0, 37.5, 100):
        np.testing.assert_array_equal(scn.values(net.ports, t), [5e6, 50])


def test_ramp_scenario():
    scn = parse_scenario("! dt=60\nt_s,N1,N2\n0,5e6,40\n3600,5e6,60\n")
    assert scn.horizon == 3600
    assert scn.value("N2", 1800) == pytest.approx(50.0)
    assert scn.value("N2", 900) == pytest.approx(45.0)
    assert scn.value("N2", 7200) == 60.0


def test_scenario_errors():
    with pytest.raises(NetworkError, match="time not increasing"):
        parse_scenario("! dt=1\nt_s,N1\n0,1\n10,1\n5,1\n")
    with pytest.raises(NetworkError, match="missing t=0 row"):
        parse_scenario("! dt=1\nt_s,N1\n5,1\n")
    with pytest.raises(NetworkError, match="unknown port"):
        parse_scenario("! T=10\n! dt=1\nt_s,N1,N2,X9\n0,5e6,1,1\n", parse_network(SINGLE_PIPE))


def test_scenario_round_trip():
    scn = parse_scenario("! T=7200\n! dt=30\nt_s,N1,N2\n0,5e6,40\n3600,5.1e6,60.25\n")
    again = parse_scenario(serialize_scenario(scn))
    assert again.horizon == scn.horizon and again.dt == scn.dt
    np.testing.assert_array_equal(again.times, scn.times)
    for p in scn.ports:
        np.testing.assert_array_equal(again.series[p], scn.series[p])


# -- height profiles


PIPE = PipeSpec("P1", "A", "B", 1000.0, 0.5, 10.0, 1e-5)


def test_monotone_profile_keeps_pipe():
    assert expand_height_profile(PIPE, [(0, 0), (500, 5), (1000, 10)]) == [PIPE]


def test_hill_profile_splits_in_two():
    pipe = PipeSpec("P1", "A", "B", 1000.0, 0.5, 0.0, 1e-5)
    out = expand_height_profile(pipe, [(0, 0), (500, 20), (1000, 0)])
    assert [(p.from_node, p.to_node) for p in out] == [("A", "P1~1"), ("P1~1", "B")]
    assert [p.length for p in out] == [500.0, 500.0]
    assert [p.height_delta for p in out] == [20.0, -20.0]
    assert all(p.diameter == 0.5 and p.roughness == 1e-5 for p in out)


def test_flat_profile():
    pipe = PipeSpec("P1", "A", "B", 1000.0, 0.5, 0.0, 1e-5)
    assert expand_height_profile(pipe, [(0, 0), (1000, 0)]) == [pipe]


def test_plateau_merges_into_following_segment():
    pipe = PipeSpec("P1", "A", "B", 400.0, 0.5, 0.0, 1e-5)
    out = expand_height_profile(pipe, [(0, 0), (100, 5), (200, 5), (300, 0), (400, 0)])
    assert [p.length for p in out] == [100.0, 300.0]


def test_profile_errors():
    with pytest.raises(NetworkError, match="at least 2"):
        expand_height_profile(PIPE, [(0, 0)])
    with pytest.raises(NetworkError, match="height_delta"):
        expand_height_profile(PIPE, [(0, 0), (1000, 11)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-200, 200, allow_nan=False), min_size=1, max_size=30),
       st.floats(50.0, 5e4))
def test_profile_expansion_conserves_sums(interior, length):
    z = [0.0] + interior + [interior[-1] * 0.5]
    s = np.linspace(0.0, length, len(z))
    s[-1] = length
    pipe = PipeSpec("P", "A", "B", length, 0.5, z[-1] - z[0], 1e-5)
    out = expand_height_profile(pipe, list(zip(s, z)))
    assert abs(sum(p.length for p in out) - length) <= 1e-12 * length
    assert abs(sum(p.height_delta for p in out) - pipe.height_delta) <= 1e-12 * max(1.0, abs(pipe.height_delta))
    assert out[0].from_node == "A" and out[-1].to_node == "B"
    for a, b in zip(out, out[1:]):
        assert a.to_node == b.from_node


def test_fixture_profiles_expand():
    net, _ = fixtures.load_fixture("hypothetical", profiles=False)
    prof = parse_profiles(fixtures.fixture_path("hypothetical", "prof").read_text())
    big = apply_height_profiles(net, prof)
    assert len(big.pipes) > len(net.pipes)
    for p in net.pipes:
        chain = [v for v in big.pipes if v.id == p.id or v.id.startswith(p.id + "#")]
        assert sum(v.length for v in chain) == pytest.approx(p.length, rel=1e-12)
        assert sum(v.height_delta for v in chain) == pytest.approx(p.height_delta, abs=1e-9)
    assert validate(big).is_tree


# -- invariants


@st.composite
def random_trees(draw):
    n = draw(st.integers(2, 12))
    pipes = []
    for k in range(1, n):
        parent = draw(st.integers(0, k - 1))
        a, b = (f"N{parent}", f"N{k}") if draw(st.booleans()) else (f"N{k}", f"N{parent}")
        pipes.append((f"P{k}", a, b, draw(st.floats(10, 1e5)), draw(st.floats(0.05, 1.5)),
                      draw(st.floats(-50, 50)), 1e-5))
    demand = tuple(f"N{k}" for k in range(1, n) if draw(st.booleans())) or ("N1",)
    return net_text(pipes, supply=("N0",), demand=demand)


@settings(max_examples=50, deadline=None)
@given(random_trees())
def test_round_trip_and_incidence_invariants(text):
    net = parse_network(text)
    assert parse_network(serialize_network(net)) == net
    M = incidence(net).stacked.toarray()
    np.testing.assert_array_equal(M.sum(axis=0), 0)
    assert np.linalg.matrix_rank(M) == len(net.nodes) - 1
    assert len(net.pipes) == len(net.nodes) - 1
    assert validate(net).is_tree


def test_bundled_fixtures_shape():
    hyp, _ = fixtures.load_fixture("hypothetical", profiles=False)
    assert (len(hyp.nodes), len(hyp.pipes), len(hyp.supply_nodes), len(hyp.demand_nodes)) == (7, 6, 1, 3)
    act, _ = fixtures.load_fixture("actual", profiles=False)
    assert (len(act.nodes), len(act.supply_nodes), len(act.demand_nodes)) == (25, 1, 8)
    assert validate(act).is_tree
